"""Benchmark manifests in, a per-(instance, method) CSV report and cactus series out."""

import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Union

import pandas as pd
import yaml
from pydantic import BaseModel, Field, model_validator

from src.network.domains import Query
from src.network.io import load_network, load_query
from src.verify.bab import BabConfig, bab_verify
from src.verify.instances import random_query, running_example_query


logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["instance", "method", "status", "wall_time", "subproblems", "tighten_calls", "error"]

# Method names as written in manifests and on the command line.
METHOD_ALIASES = {
    "interval": "interval",
    "deeppoly": "deeppoly",
    "fbc": "fbc",
    "f+bc": "fbc",
    "pmnr": "pmnr",
    "pmnr-all": "pmnr_all",
    "pmnr_all": "pmnr_all",
    "pmnr-random": "pmnr_random",
    "pmnr_random": "pmnr_random",
}


class RandomSource(BaseModel):
    seed: int
    input_dim: int = 2
    hidden: List[int] = Field(default_factory=lambda: [3, 3])


class BenchEntry(BaseModel):
    name: str
    net: Optional[str] = None
    query: Optional[str] = None
    random: Optional[RandomSource] = None
    builtin: Optional[str] = None
    methods: Optional[List[str]] = None
    timeout: Optional[float] = None

    @model_validator(mode="after")
    def _one_source(self):
        sources = [self.query is not None, self.random is not None, self.builtin is not None]
        if sum(sources) != 1:
            raise ValueError(f"entry {self.name!r} needs exactly one of query, random, builtin")
        return self


class BenchManifest(BaseModel):
    methods: List[str] = Field(default_factory=lambda: ["deeppoly", "pmnr"])
    timeout: float = 60.0
    max_depth: int = 40
    pgd_iters: Optional[int] = None
    instances: List[BenchEntry] = Field(default_factory=list)


def load_manifest(path: Union[str, Path]) -> BenchManifest:
    path = Path(path)
    data = yaml.safe_load(path.read_text()) or {}
    manifest = BenchManifest.model_validate(data)
    base = path.parent
    for entry in manifest.instances:
        if entry.net is not None and not Path(entry.net).is_absolute():
            entry.net = str(base / entry.net)
        if entry.query is not None and not Path(entry.query).is_absolute():
            entry.query = str(base / entry.query)
    return manifest


def _build_query(entry: BenchEntry) -> Query:
    if entry.random is not None:
        return random_query(entry.random.seed, entry.random.input_dim, entry.random.hidden)
    if entry.builtin is not None:
        if entry.builtin != "running_example":
            raise ValueError(f"unknown builtin instance {entry.builtin!r}")
        return running_example_query()
    network = load_network(entry.net) if entry.net else None
    return load_query(entry.query, network)


def _config_for(method: str, manifest: BenchManifest, entry: BenchEntry) -> BabConfig:
    if method not in METHOD_ALIASES:
        raise ValueError(f"unknown method {method!r}")
    config = BabConfig(
        tighten_method=METHOD_ALIASES[method],
        timeout=entry.timeout or manifest.timeout,
        max_depth=manifest.max_depth,
    )
    if manifest.pgd_iters is not None:
        pgd = config.pmnr.pgd.model_copy(update={"iters": manifest.pgd_iters})
        config = config.model_copy(update={"pmnr": config.pmnr.model_copy(update={"pgd": pgd})})
    return config


def run_benchmark(manifest: BenchManifest, out: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """One row per (instance, method); a failing row records status 'error' and the run goes on."""
    rows: List[Dict] = []
    for entry in manifest.instances:
        try:
            query = _build_query(entry)
        except Exception as e:
            logger.warning("instance %s could not be loaded: %s", entry.name, e)
            for method in entry.methods or manifest.methods:
                rows.append(_row(entry.name, method, "error", 0.0, error=str(e)))
            continue
        for method in entry.methods or manifest.methods:
            started = time.monotonic()
            try:
                verdict = bab_verify(query, _config_for(method, manifest, entry))
            except Exception as e:
                logger.warning("%s / %s failed: %s", entry.name, method, e)
                rows.append(_row(entry.name, method, "error", time.monotonic() - started, error=str(e)))
                continue
            rows.append(
                _row(
                    entry.name,
                    method,
                    verdict.status.value,
                    verdict.stats.wall_time,
                    verdict.stats.subproblems,
                    verdict.stats.tighten_calls,
                )
            )
            logger.info("%s / %s: %s in %.2fs", entry.name, method, verdict.status.value, verdict.stats.wall_time)
    report = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    if out is not None:
        report.to_csv(out, index=False)
    return report


def _row(instance: str, method: str, status: str, wall_time: float, subproblems: int = 0, tighten_calls: int = 0, error: str = "") -> Dict:
    return {
        "instance": instance,
        "method": method,
        "status": status,
        "wall_time": round(float(wall_time), 6),
        "subproblems": int(subproblems),
        "tighten_calls": int(tighten_calls),
        "error": error,
    }


def solved_counts(report: pd.DataFrame) -> pd.Series:
    """Instances closed (SAT or UNSAT) per method."""
    solved = report[report["status"].isin(["SAT", "UNSAT"])]
    counts = solved.groupby("method").size()
    return counts.reindex(sorted(report["method"].unique()), fill_value=0)


def cactus_series(report: pd.DataFrame) -> pd.DataFrame:
    """Per method, solved instances sorted by time with the running total of time spent."""
    solved = report[report["status"].isin(["SAT", "UNSAT"])].copy()
    if solved.empty:
        return pd.DataFrame(columns=["method", "solved", "cumulative_time"])
    solved = solved.sort_values(["method", "wall_time"])
    solved["solved"] = solved.groupby("method").cumcount() + 1
    solved["cumulative_time"] = solved.groupby("method")["wall_time"].cumsum()
    return solved[["method", "solved", "cumulative_time"]].reset_index(drop=True)
