"""Symbolic bound tightening: DeepPoly-style back-substitution plus plain interval propagation."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.bounds.relax import IDENTITY_RELAX, default_alpha, is_unfixed, phase_interval, phases, relax_neuron
from src.network.domains import Box, InputDomain, LpBall, Polyhedron
from src.network.model import Activation, Network, activate


logger = logging.getLogger(__name__)

# Slack tolerated before crossing bounds count as a contradiction.
EMPTY_TOL = 1e-9

NeuronId = Tuple[int, int]
BoxLike = Tuple[np.ndarray, np.ndarray]


@dataclass
class BoundsState:
    """Concrete bounds per layer, index 0 being the input and index L the output.

    post[L] mirrors pre[L]; post[0] mirrors pre[0].
    """

    pre_lower: List[np.ndarray]
    pre_upper: List[np.ndarray]
    post_lower: List[np.ndarray]
    post_upper: List[np.ndarray]
    contradiction: bool = False

    @property
    def depth(self) -> int:
        return len(self.pre_lower) - 1

    def pre(self, i: int) -> BoxLike:
        return self.pre_lower[i], self.pre_upper[i]

    def post(self, i: int) -> BoxLike:
        return self.post_lower[i], self.post_upper[i]

    def output_bounds(self) -> Tuple[float, float]:
        return float(self.pre_lower[-1][0]), float(self.pre_upper[-1][0])

    def copy(self) -> "BoundsState":
        return BoundsState(
            pre_lower=[a.copy() for a in self.pre_lower],
            pre_upper=[a.copy() for a in self.pre_upper],
            post_lower=[a.copy() for a in self.post_lower],
            post_upper=[a.copy() for a in self.post_upper],
            contradiction=self.contradiction,
        )

    def mirror_output(self) -> None:
        L = self.depth
        self.post_lower[L] = self.pre_lower[L].copy()
        self.post_upper[L] = self.pre_upper[L].copy()

    def mark_contradiction(self) -> "BoundsState":
        self.contradiction = True
        return self

    def intersect(self, other: "BoundsState") -> "BoundsState":
        """Pointwise intersection; an empty interval anywhere marks the contradiction."""
        out = self.copy()
        out.contradiction = self.contradiction or other.contradiction
        for i in range(self.depth + 1):
            out.pre_lower[i] = np.maximum(self.pre_lower[i], other.pre_lower[i])
            out.pre_upper[i] = np.minimum(self.pre_upper[i], other.pre_upper[i])
            out.post_lower[i] = np.maximum(self.post_lower[i], other.post_lower[i])
            out.post_upper[i] = np.minimum(self.post_upper[i], other.post_upper[i])
        out.settle()
        return out

    def settle(self) -> None:
        for lo, hi in zip(self.pre_lower + self.post_lower, self.pre_upper + self.post_upper):
            gap = lo - hi
            if np.any(gap > EMPTY_TOL):
                self.contradiction = True
                return
            crossed = gap > 0
            if np.any(crossed):
                mid = 0.5 * (lo[crossed] + hi[crossed])
                lo[crossed] = mid
                hi[crossed] = mid

    def within(self, other: "BoundsState", tol: float = 1e-7) -> bool:
        """True when every interval here lies inside the matching interval of other."""
        if self.contradiction:
            return True
        if other.contradiction:
            return False
        for i in range(self.depth + 1):
            if np.any(self.pre_lower[i] < other.pre_lower[i] - tol) or np.any(self.pre_upper[i] > other.pre_upper[i] + tol):
                return False
            if np.any(self.post_lower[i] < other.post_lower[i] - tol) or np.any(self.post_upper[i] > other.post_upper[i] + tol):
                return False
        return True

    def contains_trace(self, pre: Sequence[np.ndarray], post: Sequence[np.ndarray], tol: float = 1e-7) -> bool:
        for i in range(self.depth + 1):
            if np.any(pre[i] < self.pre_lower[i] - tol) or np.any(pre[i] > self.pre_upper[i] + tol):
                return False
            if np.any(post[i] < self.post_lower[i] - tol) or np.any(post[i] > self.post_upper[i] + tol):
                return False
        return True

    def to_dict(self) -> Dict:
        layers = []
        for i in range(self.depth + 1):
            layers.append(
                {
                    "layer": i,
                    "pre": np.stack([self.pre_lower[i], self.pre_upper[i]], axis=1).tolist(),
                    "post": np.stack([self.post_lower[i], self.post_upper[i]], axis=1).tolist(),
                }
            )
        return {"contradiction": self.contradiction, "layers": layers}

    @classmethod
    def from_dict(cls, data: Mapping) -> "BoundsState":
        pre_l, pre_u, post_l, post_u = [], [], [], []
        for entry in data["layers"]:
            pre = np.asarray(entry["pre"], dtype=float).reshape(-1, 2)
            post = np.asarray(entry["post"], dtype=float).reshape(-1, 2)
            pre_l.append(pre[:, 0])
            pre_u.append(pre[:, 1])
            post_l.append(post[:, 0])
            post_u.append(post[:, 1])
        return cls(pre_l, pre_u, post_l, post_u, contradiction=bool(data.get("contradiction", False)))

    @classmethod
    def unbounded(cls, net: Network) -> "BoundsState":
        widths = net.widths
        lo = [np.full(n, -np.inf) for n in widths]
        hi = [np.full(n, np.inf) for n in widths]
        return cls(lo, hi, [a.copy() for a in lo], [a.copy() for a in hi])


def activation_image(kind: Activation, l: np.ndarray, u: np.ndarray, slope: float = 0.0) -> BoxLike:
    """Exact interval image of [l, u] under σ."""
    if kind == Activation.ABS:
        straddle = (l < 0) & (u > 0)
        lo = np.where(straddle, 0.0, np.minimum(np.abs(l), np.abs(u)))
        hi = np.maximum(np.abs(l), np.abs(u))
        return lo, hi
    return activate(kind, l, slope), activate(kind, u, slope)


def clipped_post_bounds(net: Network, bounds: BoundsState) -> List[BoxLike]:
    """Stored post bounds intersected with the activation image of the pre bounds."""
    out: List[BoxLike] = [(bounds.post_lower[0].copy(), bounds.post_upper[0].copy())]
    for i in range(1, net.depth + 1):
        layer = net.layer(i)
        img_l, img_u = activation_image(layer.activation, bounds.pre_lower[i], bounds.pre_upper[i], layer.slope)
        out.append((np.maximum(bounds.post_lower[i], img_l), np.minimum(bounds.post_upper[i], img_u)))
    return out


@dataclass
class SingleRelax:
    """Diagonal relaxation rows per layer; index 0 is unused, index L is the identity."""

    lower_slope: List[np.ndarray]
    lower_offset: List[np.ndarray]
    upper_slope: List[np.ndarray]
    upper_offset: List[np.ndarray]
    alpha: List[np.ndarray]
    unfixed: List[np.ndarray] = field(default_factory=list)

    def layer(self, i: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.lower_slope[i], self.lower_offset[i], self.upper_slope[i], self.upper_offset[i]

    def unfixed_neurons(self) -> List[NeuronId]:
        return [(i, int(j)) for i in range(1, len(self.unfixed)) for j in np.nonzero(self.unfixed[i])[0]]

    def copy(self) -> "SingleRelax":
        return SingleRelax(
            [a.copy() for a in self.lower_slope],
            [a.copy() for a in self.lower_offset],
            [a.copy() for a in self.upper_slope],
            [a.copy() for a in self.upper_offset],
            [a.copy() for a in self.alpha],
            [a.copy() for a in self.unfixed],
        )

    def with_phase(self, net: Network, bounds: BoundsState, fixings: Mapping[NeuronId, int]) -> "SingleRelax":
        """Copy with the given neurons replaced by the exact segment of their chosen phase."""
        out = self.copy()
        for (i, j), phase_id in fixings.items():
            layer = net.layer(i)
            l, u = float(bounds.pre_lower[i][j]), float(bounds.pre_upper[i][j])
            options = phases(layer.activation, l, u, layer.slope)
            chosen = next((p for p in options if p.id == phase_id), options[0])
            r = chosen.exact_relax
            out.lower_slope[i][j], out.lower_offset[i][j] = r.lower_slope, r.lower_offset
            out.upper_slope[i][j], out.upper_offset[i][j] = r.upper_slope, r.upper_offset
            out.unfixed[i][j] = False
        return out

    def with_alpha(self, alpha: Sequence[np.ndarray]) -> "SingleRelax":
        """Copy with new lower slopes on the unfixed neurons."""
        out = self.copy()
        for i in range(1, len(out.unfixed)):
            mask = out.unfixed[i]
            a = np.asarray(alpha[i], dtype=float)
            out.alpha[i] = np.where(mask, a, out.alpha[i])
            out.lower_slope[i] = np.where(mask, a, out.lower_slope[i])
            out.lower_offset[i] = np.where(mask, 0.0, out.lower_offset[i])
        return out


def default_alphas(net: Network, bounds: BoundsState) -> List[np.ndarray]:
    out: List[np.ndarray] = [np.zeros(0)]
    for i in range(1, net.depth + 1):
        layer = net.layer(i)
        out.append(
            np.array(
                [
                    default_alpha(layer.activation, l, u, layer.slope)
                    for l, u in zip(bounds.pre_lower[i], bounds.pre_upper[i])
                ]
            )
        )
    return out


def _relax_layer(net: Network, i: int, l: np.ndarray, u: np.ndarray, alpha: Optional[np.ndarray]):
    layer = net.layer(i)
    n = layer.out_dim
    rows = np.zeros((5, n))
    unfixed = np.zeros(n, dtype=bool)
    for j in range(n):
        lj, uj = float(l[j]), float(u[j])
        if layer.activation == Activation.IDENTITY:
            r, a = IDENTITY_RELAX, 1.0
        else:
            unfixed[j] = is_unfixed(layer.activation, lj, uj)
            if alpha is None or len(alpha) == 0 or not unfixed[j]:
                a = default_alpha(layer.activation, lj, uj, layer.slope)
            else:
                a = float(alpha[j])
            r = relax_neuron(layer.activation, lj, uj, a, layer.slope)
        rows[:, j] = (r.lower_slope, r.lower_offset, r.upper_slope, r.upper_offset, a)
    return rows, unfixed


def _empty_relax() -> SingleRelax:
    return SingleRelax([np.zeros(0)], [np.zeros(0)], [np.zeros(0)], [np.zeros(0)], [np.zeros(0)], [np.zeros(0, dtype=bool)])


def build_relax(net: Network, bounds: BoundsState, alphas: Optional[Sequence[np.ndarray]] = None) -> SingleRelax:
    relax = _empty_relax()
    for i in range(1, net.depth + 1):
        alpha = None if alphas is None else alphas[i]
        rows, unfixed = _relax_layer(net, i, bounds.pre_lower[i], bounds.pre_upper[i], alpha)
        _append_rows(relax, rows, unfixed)
    return relax


def _append_rows(relax: SingleRelax, rows: np.ndarray, unfixed: np.ndarray) -> None:
    relax.lower_slope.append(rows[0].copy())
    relax.lower_offset.append(rows[1].copy())
    relax.upper_slope.append(rows[2].copy())
    relax.upper_offset.append(rows[3].copy())
    relax.alpha.append(rows[4].copy())
    relax.unfixed.append(unfixed)


@dataclass
class SymbolicBound:
    """coeffs·v + offset bounding a target from one side, v being x(layer) or the input when layer is 0."""

    coeffs: np.ndarray
    offset: float
    direction: str
    layer: int = 0

    @property
    def upper(self) -> bool:
        return self.direction == "upper"


def _through_relax(A: np.ndarray, c: np.ndarray, relax: SingleRelax, k: int, upper: bool):
    """Replace ĥ(k) in the rows of A by the relaxation side that keeps the bound valid."""
    ls, lo, us, uo = relax.layer(k)
    pos = np.maximum(A, 0.0)
    neg = np.minimum(A, 0.0)
    if upper:
        return pos * us + neg * ls, c + pos @ uo + neg @ lo
    return pos * ls + neg * us, c + pos @ lo + neg @ uo


def backsubstitute_rows(
    net: Network, relax: SingleRelax, layer: int, A: np.ndarray, c: np.ndarray, down_to: int, upper: bool
) -> Tuple[np.ndarray, np.ndarray]:
    """Rows over x(layer) rewritten over x(down_to), or over the input when down_to is 0."""
    A = np.array(A, dtype=float, ndmin=2)
    c = np.array(c, dtype=float).reshape(-1)
    for k in range(layer, down_to, -1):
        W, b = net.layer(k).weights, net.layer(k).bias
        c = c + A @ b
        A = A @ W
        if k - 1 == down_to or k - 1 == 0:
            break
        A, c = _through_relax(A, c, relax, k - 1, upper)
    return A, c


def backsubstitute(
    net: Network, relax: SingleRelax, target: Tuple[int, np.ndarray, float, str], down_to: int = 0
) -> SymbolicBound:
    """Back-substitute coeffs·x(layer) + offset to x(down_to) (or the input) from the given side.

    When down_to >= 1 the result is over x(down_to): the relaxation of layer
    down_to itself is applied.
    """
    layer, coeffs, offset, direction = target
    if down_to > layer:
        raise ValueError(f"cannot back-substitute layer {layer} down to layer {down_to}")
    upper = direction == "upper"
    A = np.asarray(coeffs, dtype=float).reshape(1, -1)
    c = np.array([float(offset)])
    if down_to == layer:
        return SymbolicBound(A[0], float(c[0]), direction, layer)
    A, c = backsubstitute_rows(net, relax, layer, A, c, down_to, upper)
    if down_to >= 1:
        A, c = _through_relax(A, c, relax, down_to, upper)
    return SymbolicBound(A[0], float(c[0]), direction, down_to)


def concretize_rows(A: np.ndarray, c: np.ndarray, domain: Union[InputDomain, BoxLike], upper: bool) -> np.ndarray:
    A = np.array(A, dtype=float, ndmin=2)
    c = np.asarray(c, dtype=float).reshape(-1)
    if isinstance(domain, tuple):
        lo, hi = domain
    elif isinstance(domain, Box):
        lo, hi = domain.lower, domain.upper
    elif isinstance(domain, LpBall):
        q = domain.dual_norm_order
        norms = np.linalg.norm(A, ord=q, axis=1) if A.shape[1] else np.zeros(A.shape[0])
        sign = 1.0 if upper else -1.0
        return A @ domain.center + sign * domain.radius * norms + c
    elif isinstance(domain, Polyhedron):
        from src.bounds.simplex import optimize_over_polyhedron

        values = np.array([optimize_over_polyhedron(row, domain.A, domain.b, maximize=upper) for row in A])
        return values + c
    else:
        raise TypeError(f"cannot concretize over {type(domain).__name__}")
    pos = np.maximum(A, 0.0)
    neg = np.minimum(A, 0.0)
    if upper:
        return pos @ hi + neg @ lo + c
    return pos @ lo + neg @ hi + c


def concretize(sb: SymbolicBound, domain: Union[InputDomain, BoxLike]) -> float:
    if not np.any(sb.coeffs):
        return float(sb.offset)
    return float(concretize_rows(sb.coeffs, np.array([sb.offset]), domain, sb.upper)[0])


def _input_box(din: InputDomain, prior: Optional[BoundsState]) -> BoxLike:
    lo, hi = din.bounding_box()
    if prior is not None:
        lo, hi = np.maximum(lo, prior.pre_lower[0]), np.minimum(hi, prior.pre_upper[0])
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def _relax_image(rows: np.ndarray, l: np.ndarray, u: np.ndarray) -> BoxLike:
    """Post bounds read off the relaxation lines evaluated over [l, u]."""
    ls, lo, us, uo = rows[0], rows[1], rows[2], rows[3]
    post_l = np.minimum(ls * l, ls * u) + lo
    post_u = np.maximum(us * l, us * u) + uo
    return post_l, post_u


def deeppoly(
    net: Network,
    din: InputDomain,
    alphas: Optional[Sequence[np.ndarray]] = None,
    prior: Optional[BoundsState] = None,
    refine_with_intervals: bool = False,
) -> Tuple[BoundsState, SingleRelax]:
    """Layer-by-layer back-substitution to the input, concretized over din.

    prior (when given) is intersected into every layer before its relaxation
    is built. refine_with_intervals also intersects each layer with interval
    arithmetic over the previous layer and clips post bounds to the activation image.
    """
    lo0, hi0 = _input_box(din, prior)
    bounds = BoundsState([lo0], [hi0], [lo0.copy()], [hi0.copy()])
    relax = _empty_relax()
    if np.any(lo0 > hi0 + EMPTY_TOL):
        return _fill_bottom(net, bounds, relax)
    concretize_over: Union[InputDomain, BoxLike] = din
    if prior is not None and isinstance(din, Box):
        concretize_over = (lo0, hi0)

    for i in range(1, net.depth + 1):
        layer = net.layer(i)
        W, b = layer.weights, layer.bias
        if i == 1:
            A_u, c_u, A_l, c_l = W, b, W, b
        else:
            A_u, c_u = _through_relax(W, b, relax, i - 1, upper=True)
            A_l, c_l = _through_relax(W, b, relax, i - 1, upper=False)
            A_u, c_u = backsubstitute_rows(net, relax, i - 1, A_u, c_u, 0, upper=True)
            A_l, c_l = backsubstitute_rows(net, relax, i - 1, A_l, c_l, 0, upper=False)
        u = concretize_rows(A_u, c_u, concretize_over, upper=True)
        l = concretize_rows(A_l, c_l, concretize_over, upper=False)
        if refine_with_intervals:
            post_l, post_u = _clipped_layer(net, bounds, i - 1)
            Wp, Wn = np.maximum(W, 0.0), np.minimum(W, 0.0)
            l = np.maximum(l, Wp @ post_l + Wn @ post_u + b)
            u = np.minimum(u, Wp @ post_u + Wn @ post_l + b)
        if prior is not None:
            l = np.maximum(l, prior.pre_lower[i])
            u = np.minimum(u, prior.pre_upper[i])
        if np.any(l > u + EMPTY_TOL):
            bounds.pre_lower.append(l)
            bounds.pre_upper.append(u)
            return _fill_bottom(net, bounds, relax)
        u = np.maximum(u, l)
        bounds.pre_lower.append(l)
        bounds.pre_upper.append(u)

        alpha = None if alphas is None else alphas[i]
        rows, unfixed = _relax_layer(net, i, l, u, alpha)
        _append_rows(relax, rows, unfixed)
        if i == net.depth:
            bounds.post_lower.append(l.copy())
            bounds.post_upper.append(u.copy())
            continue
        post_l, post_u = _relax_image(rows, l, u)
        if refine_with_intervals:
            img_l, img_u = activation_image(layer.activation, l, u, layer.slope)
            post_l, post_u = np.maximum(post_l, img_l), np.minimum(post_u, img_u)
        if prior is not None:
            post_l = np.maximum(post_l, prior.post_lower[i])
            post_u = np.minimum(post_u, prior.post_upper[i])
        if np.any(post_l > post_u + EMPTY_TOL):
            bounds.post_lower.append(post_l)
            bounds.post_upper.append(post_u)
            return _fill_bottom(net, bounds, relax)
        bounds.post_lower.append(post_l)
        bounds.post_upper.append(np.maximum(post_u, post_l))

    logger.debug("deeppoly output bounds %s", bounds.output_bounds())
    return bounds, relax


def _clipped_layer(net: Network, bounds: BoundsState, i: int) -> BoxLike:
    if i == 0:
        return bounds.post_lower[0], bounds.post_upper[0]
    layer = net.layer(i)
    img_l, img_u = activation_image(layer.activation, bounds.pre_lower[i], bounds.pre_upper[i], layer.slope)
    return np.maximum(bounds.post_lower[i], img_l), np.minimum(bounds.post_upper[i], img_u)


def _fill_bottom(net: Network, bounds: BoundsState, relax: SingleRelax) -> Tuple[BoundsState, SingleRelax]:
    """Pad a partially built state to full depth and mark it contradictory."""
    widths = net.widths
    while len(bounds.pre_lower) <= net.depth:
        n = widths[len(bounds.pre_lower)]
        bounds.pre_lower.append(np.zeros(n))
        bounds.pre_upper.append(np.zeros(n))
    while len(bounds.post_lower) <= net.depth:
        n = widths[len(bounds.post_lower)]
        bounds.post_lower.append(np.zeros(n))
        bounds.post_upper.append(np.zeros(n))
    while len(relax.lower_slope) <= net.depth:
        i = len(relax.lower_slope)
        n = widths[i]
        relax.lower_slope.append(np.ones(n))
        relax.lower_offset.append(np.zeros(n))
        relax.upper_slope.append(np.ones(n))
        relax.upper_offset.append(np.zeros(n))
        relax.alpha.append(np.ones(n))
        relax.unfixed.append(np.zeros(n, dtype=bool))
    bounds.contradiction = True
    return bounds, relax


def interval_bounds(net: Network, din: InputDomain) -> BoundsState:
    """Plain interval arithmetic through every layer."""
    lo, hi = din.bounding_box()
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    bounds = BoundsState([lo], [hi], [lo.copy()], [hi.copy()])
    post_l, post_u = lo, hi
    for i in range(1, net.depth + 1):
        layer = net.layer(i)
        Wp, Wn = np.maximum(layer.weights, 0.0), np.minimum(layer.weights, 0.0)
        l = Wp @ post_l + Wn @ post_u + layer.bias
        u = Wp @ post_u + Wn @ post_l + layer.bias
        bounds.pre_lower.append(l)
        bounds.pre_upper.append(u)
        post_l, post_u = activation_image(layer.activation, l, u, layer.slope)
        bounds.post_lower.append(post_l)
        bounds.post_upper.append(post_u)
    return bounds


def restrict_to_phases(net: Network, bounds: BoundsState, fixings: Mapping[NeuronId, int]) -> BoundsState:
    """Copy of bounds with each fixed neuron's pre interval cut to its phase."""
    out = bounds.copy()
    for (i, j), phase_id in fixings.items():
        l, u = phase_interval(phase_id, float(out.pre_lower[i][j]), float(out.pre_upper[i][j]))
        if l > u + EMPTY_TOL:
            out.contradiction = True
            continue
        out.pre_lower[i][j], out.pre_upper[i][j] = l, max(l, u)
    return out


def single_neuron_tightening(
    net: Network,
    din: InputDomain,
    prior: Optional[BoundsState] = None,
    refine_with_intervals: bool = True,
) -> Tuple[BoundsState, SingleRelax, List[np.ndarray]]:
    """DeepPoly with default slopes; also returns the slopes used."""
    bounds, relax = deeppoly(net, din, prior=prior, refine_with_intervals=refine_with_intervals)
    return bounds, relax, [a.copy() for a in relax.alpha]
