"""LP encoding of the relaxed network and forward-backward LP tightening."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.bounds.sbt import BoundsState, SingleRelax, clipped_post_bounds, deeppoly
from src.bounds.simplex import LinearProgram, LpConfig, LpStalledError, LpStatus, solve
from src.network.domains import InputDomain, LpBall, Polyhedron
from src.network.model import Network
from src.network.variables import HAT, PRE, LinearConstraint, Var, all_vars, index_vars
from src.settings import PMNR_DEFAULTS, REVISION_TOL


logger = logging.getLogger(__name__)


@dataclass
class _Row:
    coeffs: Dict[int, float]
    sense: str
    rhs: float
    span: Tuple[int, int]


class RelaxedEncoding:
    """Rows of the relaxed program over ĥ(0), x(1), ĥ(1), ..., x(L), tagged with the layers they touch."""

    def __init__(
        self,
        net: Network,
        bounds: BoundsState,
        relax: SingleRelax,
        planes: Sequence[LinearConstraint],
        din: InputDomain,
        dout_row: Optional[LinearConstraint] = None,
    ):
        self.net = net
        self.vars = all_vars(net)
        self.index = index_vars(self.vars)
        self.rows: List[_Row] = []
        self.lower = np.full(len(self.vars), -np.inf)
        self.upper = np.full(len(self.vars), np.inf)
        self._add_affine()
        self._add_relaxation(relax)
        for plane in planes:
            self.add_constraint(plane)
        self._add_input(din)
        if dout_row is not None:
            self.add_constraint(dout_row)
        self.set_bounds(bounds, din)

    def _add_affine(self) -> None:
        for i in range(1, self.net.depth + 1):
            layer = self.net.layer(i)
            for j in range(layer.out_dim):
                coeffs = {self.index[Var.pre(i, j)]: 1.0}
                for k, w in enumerate(layer.weights[j]):
                    if w != 0.0:
                        coeffs[self.index[Var.hat(i - 1, k)]] = -float(w)
                self.rows.append(_Row(coeffs, "=", float(layer.bias[j]), (i - 1, i)))

    def _add_relaxation(self, relax: SingleRelax) -> None:
        for i in range(1, self.net.depth):
            ls, lo, us, uo = relax.layer(i)
            for j in range(len(ls)):
                h, x = self.index[Var.hat(i, j)], self.index[Var.pre(i, j)]
                if ls[j] == us[j] and lo[j] == uo[j]:
                    self.rows.append(_Row({h: 1.0, x: -float(ls[j])}, "=", float(lo[j]), (i, i)))
                    continue
                self.rows.append(_Row({h: 1.0, x: -float(ls[j])}, ">=", float(lo[j]), (i, i)))
                self.rows.append(_Row({h: 1.0, x: -float(us[j])}, "<=", float(uo[j]), (i, i)))

    def _add_input(self, din: InputDomain) -> None:
        if isinstance(din, Polyhedron):
            for a, b in zip(din.A, din.b):
                coeffs = {self.index[Var.hat(0, k)]: float(v) for k, v in enumerate(a) if v != 0.0}
                self.rows.append(_Row(coeffs, "<=", -float(b), (0, 0)))

    def add_constraint(self, row: LinearConstraint) -> None:
        coeffs: Dict[int, float] = {}
        for var, coeff in row.terms:
            key = var if not (var.kind == HAT and var.layer == self.net.depth) else Var.pre(var.layer, var.index)
            coeffs[self.index[key]] = coeffs.get(self.index[key], 0.0) + coeff
        self.rows.append(_Row(coeffs, "<=", row.rhs, row.layers()))

    def set_bounds(self, bounds: BoundsState, din: Optional[InputDomain] = None) -> None:
        clipped = clipped_post_bounds(self.net, bounds)
        lo0, hi0 = clipped[0]
        if din is not None and not isinstance(din, Polyhedron):
            box_lo, box_hi = din.bounding_box()
            lo0, hi0 = np.maximum(lo0, box_lo), np.minimum(hi0, box_hi)
        for j in range(len(lo0)):
            k = self.index[Var.hat(0, j)]
            self.lower[k], self.upper[k] = lo0[j], hi0[j]
        for i in range(1, self.net.depth + 1):
            for j in range(self.net.widths[i]):
                k = self.index[Var.pre(i, j)]
                self.lower[k], self.upper[k] = bounds.pre_lower[i][j], bounds.pre_upper[i][j]
                if i < self.net.depth:
                    k = self.index[Var.hat(i, j)]
                    self.lower[k], self.upper[k] = clipped[i][0][j], clipped[i][1][j]

    def program(self, min_layer: int = 0, max_layer: Optional[int] = None) -> Tuple[LinearProgram, List[int]]:
        """LP over the variables in [min_layer, max_layer] and the rows lying entirely inside that span."""
        max_layer = self.net.depth if max_layer is None else max_layer
        keep = [k for k, v in enumerate(self.vars) if min_layer <= v.layer <= max_layer]
        local = {k: n for n, k in enumerate(keep)}
        lp = LinearProgram(np.zeros(len(keep)), lower=self.lower[keep], upper=self.upper[keep])
        for row in self.rows:
            if row.span[0] < min_layer or row.span[1] > max_layer:
                continue
            coeffs = np.zeros(len(keep))
            for k, c in row.coeffs.items():
                coeffs[local[k]] += c
            lp.add_row(coeffs, row.sense, row.rhs)
        return lp, keep


def encode_relaxed(
    net: Network,
    bounds: BoundsState,
    relax: SingleRelax,
    planes: Sequence[LinearConstraint],
    din: InputDomain,
    dout_row: Optional[LinearConstraint] = None,
) -> LinearProgram:
    """Whole relaxed program with a zero objective; variables ordered as variables.all_vars."""
    return RelaxedEncoding(net, bounds, relax, planes, din, dout_row).program()[0]


def objective_vector(net: Network, terms: Dict[Var, float]) -> np.ndarray:
    index = index_vars(all_vars(net))
    c = np.zeros(len(index))
    for var, coeff in terms.items():
        c[index[var]] += coeff
    return c


def _optimize(lp: LinearProgram, objective: np.ndarray, maximize: bool, config: Optional[LpConfig]):
    try:
        return solve(lp.with_objective(objective, maximize), config)
    except LpStalledError as e:
        logger.warning("LP stalled, keeping the previous bound: %s", e)
        return None


def _tighten_layer(
    enc: RelaxedEncoding, state: BoundsState, k: int, min_layer: int, max_layer: int, config: Optional[LpConfig]
) -> bool:
    """Tighten x(k) and ĥ(k) in place; returns False when the program is infeasible."""
    lp, keep = enc.program(min_layer, max_layer)
    local = {g: n for n, g in enumerate(keep)}
    targets = [(PRE, j) for j in range(enc.net.widths[k])]
    if k < enc.net.depth:
        targets += [(HAT, j) for j in range(enc.net.widths[k])]
    for kind, j in targets:
        col = local[enc.index[Var(layer=k, kind=kind, index=j)]]
        e = np.zeros(lp.num_vars)
        e[col] = 1.0
        lows, highs = (state.pre_lower[k], state.pre_upper[k]) if kind == PRE else (state.post_lower[k], state.post_upper[k])
        for maximize in (False, True):
            outcome = _optimize(lp, e, maximize, config)
            if outcome is None or outcome.status == LpStatus.UNBOUNDED:
                continue
            if outcome.status == LpStatus.INFEASIBLE:
                logger.debug("relaxed program infeasible at layer %d", k)
                return False
            if maximize:
                highs[j] = min(highs[j], outcome.value)
            else:
                lows[j] = max(lows[j], outcome.value)
    return True


def post_tighten(
    net: Network,
    din: InputDomain,
    bounds: BoundsState,
    relax: SingleRelax,
    planes: Sequence[LinearConstraint] = (),
    dout_row: Optional[LinearConstraint] = None,
    lp_config: Optional[LpConfig] = None,
) -> BoundsState:
    """One forward sweep (layers 1..L) then one backward sweep (L..1) of per-neuron LPs.

    Forward LPs at layer k use only rows over layers <= k, backward LPs only
    rows over layers >= k (the output constraint included). Results are
    intersected with the incoming bounds; an infeasible LP yields the contradiction.
    """
    state = bounds.copy()
    if state.contradiction:
        return state
    L = net.depth
    sweeps = [(k, 0, k) for k in range(1, L + 1)] + [(k, k, L) for k in range(L, 0, -1)]
    for k, lo_layer, hi_layer in sweeps:
        enc = RelaxedEncoding(net, state, relax, planes, din, dout_row)
        if not _tighten_layer(enc, state, k, lo_layer, hi_layer, lp_config):
            return state.mark_contradiction()
        if k == L:
            state.mirror_output()
        state.settle()
        if state.contradiction:
            return state
    return state


def count_revisions(old: BoundsState, new: BoundsState, tol: float = REVISION_TOL) -> int:
    """Number of interval ends that moved inward by more than tol."""
    if new.contradiction and not old.contradiction:
        return 1
    total = 0
    for i in range(old.depth + 1):
        total += int(np.sum(new.pre_lower[i] > old.pre_lower[i] + tol))
        total += int(np.sum(new.pre_upper[i] < old.pre_upper[i] - tol))
        total += int(np.sum(new.post_lower[i] > old.post_lower[i] + tol))
        total += int(np.sum(new.post_upper[i] < old.post_upper[i] - tol))
    return total


def fbc_tighten(
    net: Network,
    din: InputDomain,
    dout_row: Optional[LinearConstraint] = None,
    iterations: Optional[int] = None,
    stop_on_no_revision: bool = True,
    prior: Optional[BoundsState] = None,
    refine_with_intervals: Optional[bool] = None,
    lp_config: Optional[LpConfig] = None,
) -> BoundsState:
    """Forward-backward LP tightening without multi-neuron planes, repeated under the usual stop condition."""
    iterations = iterations or PMNR_DEFAULTS["iterations"]
    refine = PMNR_DEFAULTS["refine_with_intervals"] if refine_with_intervals is None else refine_with_intervals
    state = prior
    for it in range(iterations):
        bounds, relax = deeppoly(net, din, prior=state, refine_with_intervals=refine)
        if bounds.contradiction:
            return bounds
        tightened = post_tighten(net, din, bounds, relax, (), dout_row, lp_config)
        revised = count_revisions(bounds, tightened)
        logger.info("fbc iteration %d: %d revisions", it + 1, revised)
        state = tightened
        if tightened.contradiction or (stop_on_no_revision and revised == 0):
            break
    return state
