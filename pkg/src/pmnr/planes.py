"""Multi-neuron plane templates and their interval-derived fallback biases."""

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.bounds.sbt import BoundsState, NeuronId, SingleRelax, clipped_post_bounds
from src.network.model import Network
from src.network.variables import HAT, LinearConstraint, Var


LOWER = "lower"
UPPER = "upper"


def enumerate_epsilons(d: int) -> List[Tuple[int, ...]]:
    """Sign vectors in {-1, 0, 1}^d with at least two non-zero entries, in a fixed order."""
    if d < 2:
        raise ValueError(f"group size must be at least 2, got {d}")
    out = []
    for eps in itertools.product((1, -1, 0), repeat=d):
        if sum(1 for e in eps if e != 0) >= 2:
            out.append(eps)
    return out


@dataclass
class HyperPlane:
    """Σ coeff·var <= bias over the variables of one layer, plus where it came from."""

    terms: Tuple[Tuple[Var, float], ...]
    bias: float
    layer: int
    neurons: Tuple[int, ...]
    epsilon: Tuple[int, ...]
    template: str
    feasibility_bias: float
    dual_bound: Optional[float] = None
    branch_bounds: List[float] = field(default_factory=list)

    def constraint(self) -> LinearConstraint:
        return LinearConstraint(terms=self.terms, rhs=float(self.bias))

    def coefficients(self) -> Dict[Var, float]:
        return dict(self.terms)

    def lhs(self, pre: Sequence[np.ndarray], post: Sequence[np.ndarray]) -> float:
        return self.constraint().lhs(list(pre), list(post))

    def violation(self, pre: Sequence[np.ndarray], post: Sequence[np.ndarray]) -> float:
        return self.lhs(pre, post) - self.bias

    def to_dict(self) -> Dict:
        return {
            "terms": [{**var.to_dict(), "coeff": coeff} for var, coeff in self.terms],
            "bias": float(self.bias),
            "provenance": {
                "layer": self.layer,
                "neurons": list(self.neurons),
                "epsilon": list(self.epsilon),
                "template": self.template,
                "feasibility_bias": float(self.feasibility_bias),
                "dual_bound": None if self.dual_bound is None else float(self.dual_bound),
                "branch_bounds": [float(t) for t in self.branch_bounds],
            },
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "HyperPlane":
        prov = data.get("provenance", {})
        terms = tuple((Var.from_dict(t), float(t["coeff"])) for t in data["terms"])
        return cls(
            terms=terms,
            bias=float(data["bias"]),
            layer=int(prov.get("layer", terms[0][0].layer if terms else 0)),
            neurons=tuple(prov.get("neurons", ())),
            epsilon=tuple(prov.get("epsilon", ())),
            template=str(prov.get("template", LOWER)),
            feasibility_bias=float(prov.get("feasibility_bias", data["bias"])),
            dual_bound=prov.get("dual_bound"),
            branch_bounds=list(prov.get("branch_bounds", [])),
        )


def template_terms(
    relax: SingleRelax, layer: int, neurons: Sequence[int], epsilon: Sequence[int], template: str
) -> Tuple[Tuple[Var, float], ...]:
    """Σ ε_k (ĥ(layer, j_k) - s_k x(layer, j_k)), s_k the lower or upper relaxation slope."""
    slopes = relax.lower_slope[layer] if template == LOWER else relax.upper_slope[layer]
    terms: Dict[Var, float] = {}
    for j, e in zip(neurons, epsilon):
        if e == 0:
            continue
        terms[Var.hat(layer, j)] = float(e)
        terms[Var.pre(layer, j)] = -float(e) * float(slopes[j])
    return LinearConstraint.of(terms, 0.0).terms


def lhs_interval(
    net: Network, terms: Sequence[Tuple[Var, float]], bounds: BoundsState
) -> Tuple[float, float]:
    """Interval of Σ coeff·var over the pre bounds and the clipped post bounds."""
    clipped = clipped_post_bounds(net, bounds)
    lo = hi = 0.0
    for var, coeff in terms:
        if var.kind == HAT:
            l, u = clipped[var.layer][0][var.index], clipped[var.layer][1][var.index]
        else:
            l, u = bounds.pre_lower[var.layer][var.index], bounds.pre_upper[var.layer][var.index]
        if coeff >= 0:
            lo += coeff * l
            hi += coeff * u
        else:
            lo += coeff * u
            hi += coeff * l
    return float(lo), float(hi)


def initial_planes(
    net: Network,
    bounds: BoundsState,
    relax: SingleRelax,
    group: Sequence[NeuronId],
    epsilons: Optional[Sequence[Tuple[int, ...]]] = None,
) -> List[HyperPlane]:
    """Both templates for every ε, biased by the interval maximum of their left-hand side.

    Planes whose left-hand side repeats an earlier one (Abs with α = 0 gives
    the same lower and upper template) are dropped.
    """
    layers = {i for i, _ in group}
    if len(layers) != 1:
        raise ValueError("a neuron group must lie in a single layer")
    layer = layers.pop()
    neurons = tuple(j for _, j in group)
    epsilons = epsilons if epsilons is not None else enumerate_epsilons(len(neurons))
    seen = set()
    out: List[HyperPlane] = []
    for template in (LOWER, UPPER):
        for eps in epsilons:
            terms = template_terms(relax, layer, neurons, eps, template)
            if not terms or terms in seen:
                continue
            seen.add(terms)
            _, d_feasi = lhs_interval(net, terms, bounds)
            out.append(
                HyperPlane(
                    terms=terms,
                    bias=d_feasi,
                    layer=layer,
                    neurons=neurons,
                    epsilon=tuple(eps),
                    template=template,
                    feasibility_bias=d_feasi,
                )
            )
    return out


def plane_key(plane: HyperPlane) -> Tuple:
    return tuple((var, round(coeff, 12)) for var, coeff in plane.terms)


def merge_planes(planes: List[HyperPlane], added: Sequence[HyperPlane]) -> int:
    """Fold added into planes in place; a repeated left-hand side keeps the smaller bias.

    Returns how many planes were new.
    """
    index = {plane_key(p): n for n, p in enumerate(planes)}
    fresh = 0
    for plane in added:
        key = plane_key(plane)
        if key not in index:
            index[key] = len(planes)
            planes.append(plane)
            fresh += 1
        elif plane.bias < planes[index[key]].bias:
            planes[index[key]] = plane
    return fresh
