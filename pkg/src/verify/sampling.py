"""Empirical soundness checks: sample inputs, run them forward, measure how far any bound is broken."""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.bounds.sbt import BoundsState
from src.network.domains import Box, InputDomain, LpBall, Polyhedron
from src.network.model import Network, activate
from src.network.variables import HAT, LinearConstraint
from src.settings import SOUNDNESS_TOL


def sample_inputs(din: InputDomain, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points of the domain: uniform for boxes, projected for balls, rejection-sampled for polyhedra."""
    lo, hi = din.bounding_box()
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    if isinstance(din, Box) or (isinstance(din, LpBall) and math.isinf(din.p)):
        return rng.uniform(lo, hi, size=(n, lo.shape[0]))
    if isinstance(din, LpBall):
        raw = rng.uniform(lo, hi, size=(n, lo.shape[0]))
        return np.array([din.project(x) for x in raw])
    if isinstance(din, Polyhedron):
        kept: List[np.ndarray] = []
        for _ in range(100):
            raw = rng.uniform(lo, hi, size=(max(n, 16), lo.shape[0]))
            inside = np.all(raw @ din.A.T + din.b <= 0.0, axis=1)
            kept.extend(raw[inside])
            if len(kept) >= n:
                break
        if not kept:
            raise ValueError("no sample landed inside the polyhedron")
        return np.array(kept[:n])
    raise TypeError(f"unsupported input domain {type(din).__name__}")


def batch_trace(net: Network, X: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Pre- and post-activation values of every sample, each list entry shaped (samples, width)."""
    h = np.asarray(X, dtype=float)
    pre, post = [h], [h]
    for layer in net.layers:
        z = h @ layer.weights.T + layer.bias
        h = activate(layer.activation, z, layer.slope)
        pre.append(z)
        post.append(h)
    return pre, post


@dataclass
class SoundnessReport:
    n_samples: int
    interval_violation: float = 0.0
    worst_interval: Optional[Tuple[str, int, int]] = None
    plane_violations: List[float] = field(default_factory=list)
    tol: float = SOUNDNESS_TOL

    @property
    def plane_violation(self) -> float:
        return max(self.plane_violations, default=0.0)

    @property
    def max_violation(self) -> float:
        return max(self.interval_violation, self.plane_violation)

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol


def _interval_violation(bounds: BoundsState, pre: List[np.ndarray], post: List[np.ndarray]):
    worst, where = 0.0, None
    for i in range(bounds.depth + 1):
        for kind, values, lo, hi in (
            ("pre", pre[i], bounds.pre_lower[i], bounds.pre_upper[i]),
            ("post", post[i], bounds.post_lower[i], bounds.post_upper[i]),
        ):
            gap = np.maximum(lo - values, values - hi)
            if gap.size == 0:
                continue
            flat = int(np.argmax(gap))
            value = float(gap.reshape(-1)[flat])
            if value > worst:
                worst, where = value, (kind, i, flat % values.shape[1])
    return worst, where


def _plane_violation(row: LinearConstraint, net: Network, pre: List[np.ndarray], post: List[np.ndarray]) -> float:
    lhs = np.zeros(pre[0].shape[0])
    for var, coeff in row.terms:
        values = post if var.kind == HAT and var.layer < net.depth else pre
        lhs += coeff * values[var.layer][:, var.index]
    return max(float(np.max(lhs - row.rhs)), 0.0)


def sample_soundness(
    net: Network,
    din: InputDomain,
    bounds: Optional[BoundsState] = None,
    planes: Sequence[LinearConstraint] = (),
    n_samples: int = 10_000,
    seed: int = 0,
    output_at_least: Optional[float] = None,
    tol: float = SOUNDNESS_TOL,
) -> SoundnessReport:
    """Largest violation of the bounds and of each plane over sampled traces.

    output_at_least keeps only samples whose output reaches that value, for
    facts that hold on the output region of a query rather than on all of din.
    A contradictory bounds state claims no trace exists, so any kept sample breaks it.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    X = sample_inputs(din, n_samples, rng)
    pre, post = batch_trace(net, X)
    if output_at_least is not None:
        keep = pre[-1][:, 0] >= output_at_least
        pre, post = [a[keep] for a in pre], [a[keep] for a in post]
    report = SoundnessReport(n_samples=int(pre[0].shape[0]), tol=tol)
    if report.n_samples == 0:
        return report
    if bounds is not None and bounds.contradiction:
        report.interval_violation, report.worst_interval = math.inf, ("contradiction", 0, 0)
    elif bounds is not None:
        report.interval_violation, report.worst_interval = _interval_violation(bounds, pre, post)
    report.plane_violations = [_plane_violation(p, net, pre, post) for p in planes]
    return report
