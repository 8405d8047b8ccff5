"""Exact answers for tiny networks by enumerating activation patterns.

Every assignment of a phase to the unfixed neurons turns the network into
an affine map on a polyhedron; one LP per pattern then settles the question.
The cost doubles with each unfixed neuron, hence the explicit refusal limit.
"""

import itertools
import logging
import math
import time
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.bounds.posttighten import RelaxedEncoding, objective_vector
from src.bounds.sbt import BoundsState, NeuronId, SingleRelax, deeppoly, restrict_to_phases
from src.bounds.simplex import LinearProgram, LpConfig, LpStatus, solve
from src.network.domains import InputDomain, LpBall, Query
from src.network.model import Network
from src.network.variables import HAT, LinearConstraint, Var, all_vars
from src.verify.verdict import Verdict, VerdictStats


logger = logging.getLogger(__name__)

MAX_UNFIXED = 12


class OracleRefusal(RuntimeError):
    """The instance is outside what exhaustive enumeration is willing to do."""


def _check_domain(din: InputDomain) -> None:
    if isinstance(din, LpBall) and not math.isinf(din.p):
        raise OracleRefusal(f"an l{din.p:g} ball is not a polyhedron; exact LPs need box or polyhedral inputs")


def pattern_program(
    net: Network,
    din: InputDomain,
    bounds: BoundsState,
    relax: SingleRelax,
    fixings: Mapping[NeuronId, int],
    extra: Sequence[LinearConstraint] = (),
) -> Optional[LinearProgram]:
    """Exact program of the network with the given neurons held in one phase each.

    Every neuron not in fixings must already be fixed by the bounds. Returns
    None when the phase restriction empties some pre-activation interval.
    """
    phased = restrict_to_phases(net, bounds, fixings)
    if phased.contradiction:
        return None
    exact = relax.with_phase(net, bounds, fixings)
    rows = list(extra)
    for (i, j), phase_id in fixings.items():
        rows.append(LinearConstraint.of({Var.pre(i, j): 1.0 if phase_id == 0 else -1.0}, 0.0))
    return RelaxedEncoding(net, phased, exact, rows, din).program()[0]


def _patterns(unfixed: Sequence[NeuronId], forced: Mapping[NeuronId, int]) -> Iterator[Dict[NeuronId, int]]:
    free = [n for n in unfixed if n not in forced]
    for combo in itertools.product((0, 1), repeat=len(free)):
        pattern = dict(zip(free, combo))
        pattern.update({n: p for n, p in forced.items() if n in unfixed})
        yield pattern


def _prepare(net: Network, din: InputDomain, max_unfixed: int) -> Tuple[BoundsState, SingleRelax, List[NeuronId]]:
    _check_domain(din)
    bounds, relax = deeppoly(net, din, refine_with_intervals=True)
    unfixed = relax.unfixed_neurons()
    if len(unfixed) > max_unfixed:
        raise OracleRefusal(f"{len(unfixed)} unfixed neurons exceed the enumeration limit of {max_unfixed}")
    return bounds, relax, unfixed


def _output_var(net: Network) -> Var:
    return Var.pre(net.depth, 0)


def _input_point(net: Network, point: np.ndarray) -> np.ndarray:
    return np.asarray(point[: net.input_dim], dtype=float)


def pattern_oracle(
    query: Query, max_unfixed: int = MAX_UNFIXED, lp_config: Optional[LpConfig] = None
) -> Verdict:
    """SAT with a checked witness, or UNSAT, by maximizing the output over every pattern."""
    started = time.monotonic()
    canon = query.canonical()
    net, din = canon.network, canon.input_domain
    bounds, relax, unfixed = _prepare(net, din, max_unfixed)
    stats = VerdictStats()
    objective = objective_vector(net, {_output_var(net): 1.0})
    for pattern in _patterns(unfixed, {}):
        stats.subproblems += 1
        lp = pattern_program(net, din, bounds, relax, pattern)
        if lp is None:
            continue
        outcome = solve(lp.with_objective(objective, maximize=True), lp_config)
        if outcome.status != LpStatus.OPTIMAL or outcome.value <= canon.threshold:
            continue
        witness = _input_point(net, outcome.point)
        if query.is_violated_by(witness):
            stats.wall_time = time.monotonic() - started
            return Verdict.sat(witness, stats)
        logger.debug("pattern %s reaches %.9g but its witness does not survive forward evaluation", pattern, outcome.value)
    stats.wall_time = time.monotonic() - started
    return Verdict.unsat(stats)


def exact_output_range(
    query: Query, max_unfixed: int = MAX_UNFIXED, lp_config: Optional[LpConfig] = None
) -> Tuple[float, float]:
    """min and max of N over the input domain, in the query's own orientation."""
    lo, hi = _exact_range_canonical(query.canonical(), max_unfixed, lp_config)
    return (-hi, -lo) if query.direction == "<" else (lo, hi)


def _exact_range_canonical(canon: Query, max_unfixed: int, lp_config: Optional[LpConfig]) -> Tuple[float, float]:
    net, din = canon.network, canon.input_domain
    bounds, relax, unfixed = _prepare(net, din, max_unfixed)
    objective = objective_vector(net, {_output_var(net): 1.0})
    lo, hi = math.inf, -math.inf
    for pattern in _patterns(unfixed, {}):
        lp = pattern_program(net, din, bounds, relax, pattern)
        if lp is None:
            continue
        low = solve(lp.with_objective(objective, maximize=False), lp_config)
        if low.status == LpStatus.INFEASIBLE:
            continue
        high = solve(lp.with_objective(objective, maximize=True), lp_config)
        lo, hi = min(lo, low.value), max(hi, high.value)
    return lo, hi


def exact_bounds(
    net: Network, din: InputDomain, max_unfixed: int = MAX_UNFIXED, lp_config: Optional[LpConfig] = None
) -> BoundsState:
    """Tightest per-neuron intervals: the union over patterns of each variable's LP range."""
    bounds, relax, unfixed = _prepare(net, din, max_unfixed)
    variables = all_vars(net)
    lows = np.full(len(variables), np.inf)
    highs = np.full(len(variables), -np.inf)
    for pattern in _patterns(unfixed, {}):
        lp = pattern_program(net, din, bounds, relax, pattern)
        if lp is None:
            continue
        for k in range(len(variables)):
            e = np.zeros(len(variables))
            e[k] = 1.0
            low = solve(lp.with_objective(e, maximize=False), lp_config)
            if low.status == LpStatus.INFEASIBLE:
                break
            high = solve(lp.with_objective(e, maximize=True), lp_config)
            lows[k] = min(lows[k], low.value)
            highs[k] = max(highs[k], high.value)

    out = BoundsState.unbounded(net)
    for k, var in enumerate(variables):
        if var.kind == HAT:
            out.post_lower[var.layer][var.index], out.post_upper[var.layer][var.index] = lows[k], highs[k]
            if var.layer == 0:
                out.pre_lower[0][var.index], out.pre_upper[0][var.index] = lows[k], highs[k]
        else:
            out.pre_lower[var.layer][var.index], out.pre_upper[var.layer][var.index] = lows[k], highs[k]
            if var.layer == net.depth:
                out.post_lower[var.layer][var.index], out.post_upper[var.layer][var.index] = lows[k], highs[k]
    return out


def confirm_infeasible(
    net: Network,
    din: InputDomain,
    fixings: Mapping[NeuronId, int],
    extra: Sequence[LinearConstraint] = (),
    max_unfixed: int = MAX_UNFIXED,
    lp_config: Optional[LpConfig] = None,
) -> bool:
    """True when no exact trace puts the given neurons in the given phases while meeting extra."""
    bounds, relax, unfixed = _prepare(net, din, max_unfixed)
    forced_rows = [
        LinearConstraint.of({Var.pre(i, j): 1.0 if p == 0 else -1.0}, 0.0) for (i, j), p in fixings.items() if (i, j) not in unfixed
    ]
    zero = np.zeros(len(all_vars(net)))
    for pattern in _patterns(unfixed, fixings):
        lp = pattern_program(net, din, bounds, relax, pattern, list(extra) + forced_rows)
        if lp is None:
            continue
        if solve(lp.with_objective(zero), lp_config).status != LpStatus.INFEASIBLE:
            return False
    return True
