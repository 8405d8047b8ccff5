import json

from src.settings import configure_logging
from src.verify.bab import BabConfig, bab_verify
from src.verify.instances import random_suite, running_example_query
from src.verify.oracle import OracleRefusal, pattern_oracle

configure_logging()


def run(method, queries, pgd_iters=40):
    rows = []
    for name, q in queries:
        cfg = BabConfig(tighten_method=method, timeout=30)
        cfg.pmnr.pgd.iters = pgd_iters
        verdict = bab_verify(q, cfg)
        try:
            truth = pattern_oracle(q).status.value
        except OracleRefusal:
            truth = None
        rows.append({"instance": name, **verdict.to_dict(), "oracle": truth})
    return rows


queries = [("running_example", running_example_query())]
queries += [(f"random_{k}", q) for k, q in enumerate(random_suite(8, seed=100))]

all_out = {}
for method in ("deeppoly", "fbc", "pmnr"):
    rows = run(method, queries)
    all_out[method] = {
        "solved": sum(1 for r in rows if r["status"] != "UNKNOWN"),
        "disagreements": [r["instance"] for r in rows if r["oracle"] and r["status"] != "UNKNOWN" and r["status"] != r["oracle"]],
        "rows": rows,
    }
print(json.dumps(all_out, indent=2))
