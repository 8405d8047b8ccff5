"""Command line: tighten bounds, verify a query, run a benchmark manifest.

    python -m src.cli tighten --net net.json --query q.json --method pmnr --out bounds.json
    python -m src.cli verify  --net net.json --query q.json --tighten pmnr --timeout 60
    python -m src.cli bench   --manifest fixtures/bench/manifest.yaml --out report.csv

verify exits 0 for UNSAT, 1 for SAT, 2 for UNKNOWN; every command exits 3 on errors.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from src.bounds.dualopt import PgdConfig
from src.bounds.posttighten import fbc_tighten
from src.bounds.sbt import deeppoly, interval_bounds
from src.bounds.simplex import LpConfig, LpStalledError
from src.network.domains import Query
from src.network.io import ParseError, load_network, load_query
from src.network.model import DimensionError
from src.network.variables import output_at_least
from src.pmnr.loop import PmnrConfig, pmnr_loop
from src.settings import BAB_DEFAULTS, PMNR_DEFAULTS, configure_logging
from src.verify.bab import BabConfig, bab_verify
from src.verify.bench import METHOD_ALIASES, load_manifest, run_benchmark, solved_counts


logger = logging.getLogger(__name__)

EXIT_ERROR = 3
TIGHTEN_CHOICES = ["interval", "deeppoly", "fbc", "pmnr", "pmnr-all", "pmnr-random"]


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the error code, not argparse's 2 (which means UNKNOWN here)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _load(args) -> Query:
    network = load_network(args.net) if args.net else None
    return load_query(args.query, network)


def _pgd(args) -> PgdConfig:
    overrides = {}
    if args.pgd_iters is not None:
        overrides["iters"] = args.pgd_iters
    if args.pgd_step is not None:
        overrides["step"] = args.pgd_step
    if args.pgd_no_alpha:
        overrides["optimize_alpha"] = False
    return PgdConfig(**overrides)


def _lp(args) -> LpConfig:
    return LpConfig(backend=args.lp_backend) if args.lp_backend else LpConfig()


def _pmnr(args, method: str) -> PmnrConfig:
    variant = METHOD_ALIASES.get(method, "pmnr")
    overrides = {"pgd": _pgd(args), "lp": _lp(args), "seed": args.seed}
    if variant.startswith("pmnr"):
        overrides["variant"] = variant
    if args.group_size is not None:
        overrides["group_size"] = args.group_size
    if args.pmnr_iters is not None:
        overrides["iterations"] = args.pmnr_iters
    if args.no_output_constraint:
        overrides["use_output_constraint"] = False
    return PmnrConfig(**overrides)


def _write_json(path: str, payload) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)


def cmd_tighten(args) -> int:
    query = _load(args)
    canon = query.canonical()
    config = _pmnr(args, args.method)
    planes = None
    method = METHOD_ALIASES[args.method]
    if method == "interval":
        bounds = interval_bounds(canon.network, canon.input_domain)
    elif method == "deeppoly":
        bounds = deeppoly(canon.network, canon.input_domain, refine_with_intervals=config.refine_with_intervals)[0]
    elif method == "fbc":
        dout = output_at_least(canon.network, canon.threshold) if config.use_output_constraint else None
        bounds = fbc_tighten(
            canon.network, canon.input_domain, dout, config.iterations, config.stop_on_no_revision, lp_config=config.lp
        )
    else:
        result = pmnr_loop(query, config)
        bounds, planes = result.bounds, result.planes_to_dict()

    lo, hi = bounds.output_bounds()
    output = [-hi, -lo] if query.direction == "<" else [lo, hi]
    payload = {
        "method": args.method,
        "direction": query.direction,
        "threshold": query.threshold,
        "negated": query.direction == "<",
        "output": output,
        "bounds": bounds.to_dict(),
    }
    if args.out:
        _write_json(args.out, payload)
    if args.planes_out:
        _write_json(args.planes_out, planes or {"planes": [], "infeasible_branches": []})
    print(json.dumps({"method": args.method, "output": output, "contradiction": bounds.contradiction}))
    return 0


def cmd_verify(args) -> int:
    query = _load(args)
    config = BabConfig(
        tighten_method=METHOD_ALIASES[args.tighten],
        split_heuristic=args.split,
        max_depth=args.max_depth if args.max_depth is not None else BAB_DEFAULTS["max_depth"],
        timeout=args.timeout if args.timeout is not None else BAB_DEFAULTS["timeout"],
        threads=args.threads,
        seed=args.seed,
        pmnr=_pmnr(args, args.tighten),
        lp=_lp(args),
    )
    verdict = bab_verify(query, config)
    print(json.dumps(verdict.to_dict()))
    return verdict.exit_code


def cmd_bench(args) -> int:
    manifest = load_manifest(args.manifest)
    report = run_benchmark(manifest, args.out)
    print(solved_counts(report).to_string() if not report.empty else "no instances")
    return 0


def _add_tuning(p: argparse.ArgumentParser) -> None:
    p.add_argument("--group-size", type=int, default=None, help=f"neurons per group (default {PMNR_DEFAULTS['group_size']})")
    p.add_argument("--pmnr-iters", type=int, default=None, help=f"outer iterations (default {PMNR_DEFAULTS['iterations']})")
    p.add_argument("--seed", type=int, default=PMNR_DEFAULTS["seed"])
    p.add_argument("--pgd-iters", type=int, default=None)
    p.add_argument("--pgd-step", type=float, default=None)
    p.add_argument("--pgd-no-alpha", action="store_true", help="keep relaxation slopes fixed during dual ascent")
    p.add_argument("--lp-backend", choices=["simplex", "highs", "external"], default=None)
    p.add_argument("--no-output-constraint", action="store_true", help="tighten over the whole input domain")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pmnr", description="Multi-neuron bound tightening and verification")
    parser.add_argument("--log-level", default="", help="DEBUG, INFO, WARNING (default from PMNR_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tighten", help="tighten every neuron bound of a query")
    t.add_argument("--net", default=None, help="network JSON (optional when the query embeds one)")
    t.add_argument("--query", required=True)
    t.add_argument("--method", choices=TIGHTEN_CHOICES, default="pmnr")
    t.add_argument("--out", default=None, help="bounds.json")
    t.add_argument("--planes-out", default=None, help="planes.json")
    _add_tuning(t)
    t.set_defaults(func=cmd_tighten)

    v = sub.add_parser("verify", help="decide a query with branch and bound")
    v.add_argument("--net", default=None)
    v.add_argument("--query", required=True)
    v.add_argument("--tighten", choices=TIGHTEN_CHOICES, default=BAB_DEFAULTS["tighten_method"].replace("_", "-"))
    v.add_argument("--split", choices=["nsse", "width"], default=BAB_DEFAULTS["split_heuristic"])
    v.add_argument("--max-depth", type=int, default=None)
    v.add_argument("--timeout", type=float, default=None)
    v.add_argument("--threads", type=int, default=BAB_DEFAULTS["threads"])
    _add_tuning(v)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="run a benchmark manifest")
    b.add_argument("--manifest", required=True)
    b.add_argument("--out", default="report.csv")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except (ParseError, DimensionError, ValidationError, LpStalledError, OSError, ValueError) as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
