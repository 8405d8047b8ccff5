"""Branch and bound over neuron phases.

The root is tightened with the configured method; every later subproblem is
re-tightened with DeepPoly warm-started from its parent. A subproblem closes
when its output cannot pass the threshold, returns a witness when a sampled
input passes it, and otherwise splits its highest-scoring unfixed neuron.
"""

import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from src.bounds.posttighten import fbc_tighten, objective_vector
from src.bounds.sbt import BoundsState, NeuronId, SingleRelax, deeppoly, interval_bounds, restrict_to_phases
from src.bounds.simplex import LpConfig, LpStatus, solve
from src.network.domains import Box, LpBall, Polyhedron, Query
from src.network.variables import Var, output_at_least
from src.pmnr.loop import PmnrConfig, pmnr_loop
from src.pmnr.selection import nsse_scores, span_scores
from src.settings import BAB_DEFAULTS
from src.verify.oracle import pattern_program
from src.verify.verdict import Verdict, VerdictStats


logger = logging.getLogger(__name__)

TIGHTEN_METHODS = ("interval", "deeppoly", "fbc", "pmnr", "pmnr_all", "pmnr_random")


class BabConfig(BaseModel):
    tighten_method: Literal["interval", "deeppoly", "fbc", "pmnr", "pmnr_all", "pmnr_random"] = Field(
        default_factory=lambda: BAB_DEFAULTS["tighten_method"]
    )
    split_heuristic: Literal["nsse", "width"] = Field(default_factory=lambda: BAB_DEFAULTS["split_heuristic"])
    max_depth: int = Field(default_factory=lambda: BAB_DEFAULTS["max_depth"], ge=0)
    timeout: float = Field(default_factory=lambda: BAB_DEFAULTS["timeout"], gt=0)
    threads: int = Field(default_factory=lambda: BAB_DEFAULTS["threads"], ge=1)
    random_samples: int = Field(default_factory=lambda: BAB_DEFAULTS["random_samples"], ge=0)
    seed: int = 0
    pmnr: PmnrConfig = Field(default_factory=PmnrConfig)
    lp: LpConfig = Field(default_factory=LpConfig)


@dataclass
class Subproblem:
    fixings: Dict[NeuronId, int]
    depth: int
    bounds: BoundsState
    serial: int = 0

    def child(self, neuron: NeuronId, phase_id: int, bounds: BoundsState, serial: int) -> "Subproblem":
        if neuron in self.fixings:
            raise ValueError(f"neuron {neuron} is already fixed in this subproblem")
        fixings = dict(self.fixings)
        fixings[neuron] = phase_id
        return Subproblem(fixings, self.depth + 1, bounds, serial)


@dataclass
class _Outcome:
    kind: str
    witness: Optional[np.ndarray] = None
    reason: str = ""
    split: Optional[Tuple[NeuronId, BoundsState]] = None
    tighten_calls: int = 0


def root_bounds(canon: Query, config: BabConfig) -> BoundsState:
    """Initial tightening of the canonical query with the configured method."""
    net, din = canon.network, canon.input_domain
    method = config.tighten_method
    if method == "interval":
        return interval_bounds(net, din)
    if method == "deeppoly":
        return deeppoly(net, din, refine_with_intervals=True)[0]
    dout = output_at_least(net, canon.threshold) if config.pmnr.use_output_constraint else None
    if method == "fbc":
        return fbc_tighten(
            net,
            din,
            dout,
            iterations=config.pmnr.iterations,
            stop_on_no_revision=config.pmnr.stop_on_no_revision,
            lp_config=config.lp,
        )
    pmnr_config = config.pmnr.model_copy(update={"variant": method, "lp": config.lp})
    return pmnr_loop(canon, pmnr_config).bounds


class _Search:
    def __init__(self, query: Query, config: BabConfig):
        self.query = query
        self.canon = query.canonical()
        self.net = self.canon.network
        self.din = self.canon.input_domain
        self.threshold = self.canon.threshold
        self.config = config

    def closed(self, bounds: BoundsState) -> bool:
        return bounds.contradiction or bounds.output_bounds()[1] <= self.threshold

    def _candidates(self, bounds: BoundsState, serial: int) -> List[np.ndarray]:
        lo, hi = self.din.bounding_box()
        lo = np.maximum(np.asarray(lo, dtype=float), bounds.pre_lower[0])
        hi = np.minimum(np.asarray(hi, dtype=float), bounds.pre_upper[0])
        hi = np.maximum(hi, lo)
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        points = [center]
        for k in range(center.shape[0]):
            for sign in (1.0, -1.0):
                p = center.copy()
                p[k] += sign * half[k]
                points.append(p)
        if self.config.random_samples:
            rng = np.random.default_rng([self.config.seed, serial])
            points.extend(rng.uniform(lo, hi, size=(self.config.random_samples, center.shape[0])))
        if isinstance(self.din, LpBall):
            points = [self.din.project(p) for p in points]
        elif isinstance(self.din, Box):
            points = [np.clip(p, self.din.lower, self.din.upper) for p in points]
        return points

    def find_witness(self, bounds: BoundsState, serial: int) -> Optional[np.ndarray]:
        for point in self._candidates(bounds, serial):
            if isinstance(self.din, Polyhedron) and not self.din.contains(point):
                continue
            if self.query.is_violated_by(point):
                return point
        return None

    def _leaf(self, bounds: BoundsState, relax: SingleRelax) -> _Outcome:
        """All phases known: one exact LP decides the subproblem."""
        lp = pattern_program(self.net, self.din, bounds, relax, {})
        if lp is None:
            return _Outcome("unsat")
        objective = objective_vector(self.net, {Var.pre(self.net.depth, 0): 1.0})
        outcome = solve(lp.with_objective(objective, maximize=True), self.config.lp)
        if outcome.status == LpStatus.INFEASIBLE or (outcome.optimal and outcome.value <= self.threshold):
            return _Outcome("unsat")
        if outcome.optimal:
            witness = np.asarray(outcome.point[: self.net.input_dim], dtype=float)
            if self.query.is_violated_by(witness):
                return _Outcome("sat", witness=witness)
        return _Outcome("unknown", reason=f"leaf LP ended {outcome.status.value} without a usable witness")

    def _split_neuron(self, bounds: BoundsState, relax: SingleRelax) -> NeuronId:
        if self.config.split_heuristic == "nsse":
            scores = nsse_scores(self.net, bounds, relax)
        else:
            scores = span_scores(self.net, bounds)
        return max(sorted(scores), key=lambda n: scores[n])

    def process(self, sub: Subproblem) -> _Outcome:
        if sub.bounds.contradiction:
            return _Outcome("unsat")
        bounds, relax = deeppoly(self.net, self.din, prior=sub.bounds, refine_with_intervals=True)
        if self.closed(bounds):
            return _Outcome("unsat", tighten_calls=1)
        witness = self.find_witness(bounds, sub.serial)
        if witness is not None:
            return _Outcome("sat", witness=witness, tighten_calls=1)
        if not relax.unfixed_neurons():
            out = self._leaf(bounds, relax)
            out.tighten_calls = 1
            return out
        if sub.depth >= self.config.max_depth:
            return _Outcome("unknown", reason=f"max depth {self.config.max_depth} reached", tighten_calls=1)
        return _Outcome("split", split=(self._split_neuron(bounds, relax), bounds), tighten_calls=1)


def bab_verify(query: Query, config: Optional[BabConfig] = None) -> Verdict:
    """SAT (with a forward-checked witness), UNSAT, or UNKNOWN when the depth or time budget runs out."""
    config = config or BabConfig()
    started = time.monotonic()
    stats = VerdictStats()
    search = _Search(query, config)

    def finish(verdict: Verdict) -> Verdict:
        stats.wall_time = time.monotonic() - started
        verdict.stats = stats
        logger.info("%s after %d subproblems in %.2fs", verdict.status.value, stats.subproblems, stats.wall_time)
        return verdict

    root = root_bounds(search.canon, config)
    stats.tighten_calls += 1
    queue = deque([Subproblem({}, 0, root, serial=0)])
    next_serial = 1
    unknown_reason = ""
    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        while queue:
            if time.monotonic() - started > config.timeout:
                return finish(Verdict.unknown(f"timeout after {config.timeout:g}s"))
            batch = [queue.popleft() for _ in range(min(config.threads, len(queue)))]
            outcomes = list(pool.map(search.process, batch)) if pool else [search.process(s) for s in batch]
            for sub, out in zip(batch, outcomes):
                stats.subproblems += 1
                stats.tighten_calls += out.tighten_calls
                stats.deepest = max(stats.deepest, sub.depth)
                logger.debug("subproblem %d depth %d fixings %s: %s", sub.serial, sub.depth, sub.fixings, out.kind)
                if out.kind == "sat" and query.is_violated_by(out.witness):
                    return finish(Verdict.sat(out.witness))
                if out.kind == "unknown":
                    unknown_reason = unknown_reason or out.reason
                elif out.kind == "split":
                    neuron, bounds = out.split
                    for phase_id in (0, 1):
                        child_bounds = restrict_to_phases(search.net, bounds, {neuron: phase_id})
                        queue.append(sub.child(neuron, phase_id, child_bounds, next_serial))
                        next_serial += 1
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    if unknown_reason:
        return finish(Verdict.unknown(unknown_reason))
    return finish(Verdict.unsat())
