import json
import os
import subprocess

import pandas as pd
import streamlit as st

from src.bounds.posttighten import fbc_tighten
from src.bounds.sbt import deeppoly, interval_bounds
from src.network.io import ParseError, parse_network, parse_query, serialize_network, serialize_query
from src.network.variables import output_at_least
from src.pmnr.loop import PmnrConfig, pmnr_loop
from src.settings import PGD_DEFAULTS, PMNR_DEFAULTS, configure_logging
from src.verify.bab import BabConfig, bab_verify
from src.verify.bench import cactus_series, solved_counts
from src.verify.instances import running_example_query


configure_logging()

st.set_page_config(page_title="PMNR bound tightening", layout="wide")
st.title("PMNR bound tightening")
st.caption("Tightens neuron bounds of small piecewise-linear networks with multi-neuron planes, and verifies output queries.")


if "result" not in st.session_state:
    st.session_state.result = None
if "verdict" not in st.session_state:
    st.session_state.verdict = None

example = running_example_query()

with st.sidebar:
    st.header("Configuration")
    method = st.selectbox("Tightening method", ["pmnr", "pmnr_all", "pmnr_random", "fbc", "deeppoly", "interval"], index=0)
    group_size = st.selectbox("Group size", [2, 3], index=0 if PMNR_DEFAULTS["group_size"] == 2 else 1)
    iterations = st.slider("Outer iterations", 1, 10, int(PMNR_DEFAULTS["iterations"]))
    pgd_iters = st.slider("Dual ascent steps", 10, 500, int(PGD_DEFAULTS["iters"]), step=10)
    use_dout = st.checkbox("Restrict to the query's output region", value=True)
    seed = st.number_input("Seed", value=int(PMNR_DEFAULTS["seed"]), step=1)
    timeout = st.slider("Verifier timeout (s)", 5, 300, 60)

    try:
        commit = subprocess.check_output(["git", "rev-parse", "--short", "HEAD"]).decode().strip()
    except Exception:
        commit = "unknown"
    st.caption(f"LP backend: {os.getenv('PMNR_LP_BACKEND', 'simplex')} | Commit: {commit}")


net_col, query_col = st.columns([1, 1])
with net_col:
    net_text = st.text_area("Network (JSON)", value=serialize_network(example.network), height=260)
with query_col:
    query_text = st.text_area("Query (JSON)", value=serialize_query(example), height=260)


def load_query():
    return parse_query(query_text, parse_network(net_text))


def pmnr_config() -> PmnrConfig:
    cfg = PmnrConfig(
        group_size=group_size,
        iterations=iterations,
        seed=int(seed),
        use_output_constraint=use_dout,
    )
    cfg.pgd.iters = pgd_iters
    if method.startswith("pmnr"):
        cfg.variant = method
    return cfg


run_col, verify_col = st.columns([1, 1])
with run_col:
    if st.button("Tighten", type="primary"):
        with st.spinner("Tightening..."):
            try:
                query = load_query()
                canon = query.canonical()
                cfg = pmnr_config()
                planes = []
                if method == "interval":
                    bounds = interval_bounds(canon.network, canon.input_domain)
                elif method == "deeppoly":
                    bounds = deeppoly(canon.network, canon.input_domain, refine_with_intervals=True)[0]
                elif method == "fbc":
                    dout = output_at_least(canon.network, canon.threshold) if use_dout else None
                    bounds = fbc_tighten(canon.network, canon.input_domain, dout, iterations)
                else:
                    result = pmnr_loop(query, cfg)
                    bounds, planes = result.bounds, result.planes_to_dict()["planes"]
                st.session_state.result = {
                    "negated": query.direction == "<",
                    "bounds": bounds.to_dict(),
                    "planes": planes,
                }
                st.success("Contradiction: no input reaches the threshold." if bounds.contradiction else "Bounds tightened.")
            except (ParseError, ValueError) as e:
                st.session_state.result = None
                st.error(f"Tightening failed: {e}")
with verify_col:
    if st.button("Verify"):
        with st.spinner("Branch and bound..."):
            try:
                cfg = BabConfig(tighten_method=method, timeout=float(timeout), seed=int(seed), pmnr=pmnr_config())
                st.session_state.verdict = bab_verify(load_query(), cfg).to_dict()
            except (ParseError, ValueError) as e:
                st.session_state.verdict = None
                st.error(f"Verification failed: {e}")


st.subheader("Bounds")
result = st.session_state.result
if not result:
    st.info("No bounds yet. Click 'Tighten'.")
else:
    if result["negated"]:
        st.caption("The query asks for '<', so the output row shows the negated network.")
    rows = []
    for layer in result["bounds"]["layers"]:
        for j, (pre, post) in enumerate(zip(layer["pre"], layer["post"])):
            rows.append({"layer": layer["layer"], "neuron": j, "pre_lower": pre[0], "pre_upper": pre[1], "post_lower": post[0], "post_upper": post[1]})
    st.dataframe(pd.DataFrame(rows), use_container_width=True)
    if result["planes"]:
        with st.expander(f"Planes ({len(result['planes'])})", expanded=False):
            for plane in result["planes"]:
                lhs = " + ".join(f"{t['coeff']:.3g}*{'h' if t['kind'] == 'hat' else 'x'}({t['layer']},{t['index']})" for t in plane["terms"])
                st.write(f"{lhs} <= {plane['bias']:.4f}")
    st.download_button("Download bounds.json", data=json.dumps(result["bounds"], indent=2), file_name="bounds.json", mime="application/json")

st.subheader("Verdict")
if st.session_state.verdict:
    st.json(st.session_state.verdict)
else:
    st.info("No verdict yet. Click 'Verify'.")


with st.expander("Benchmark report", expanded=False):
    uploaded = st.file_uploader("report.csv", type=["csv"])
    if uploaded is not None:
        report = pd.read_csv(uploaded)
        st.write(solved_counts(report))
        series = cactus_series(report)
        if not series.empty:
            st.line_chart(series.pivot_table(index="solved", columns="method", values="cumulative_time"))
