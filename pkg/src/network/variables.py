from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Tuple

import numpy as np

from src.network.model import Network


HAT = "hat"
PRE = "pre"


@dataclass(frozen=True, order=True)
class Var:
    """One neuron value: ('hat', i, j) is ĥ(i,j), ('pre', i, j) is x(i,j).

    ĥ lives on layers 0..L-1 (layer 0 is the input); x on layers 1..L.
    """

    layer: int
    kind: str
    index: int

    def __post_init__(self):
        if self.kind not in (HAT, PRE):
            raise ValueError(f"unknown variable kind {self.kind!r}")

    @classmethod
    def hat(cls, layer: int, index: int) -> "Var":
        return cls(layer=layer, kind=HAT, index=index)

    @classmethod
    def pre(cls, layer: int, index: int) -> "Var":
        return cls(layer=layer, kind=PRE, index=index)

    def label(self) -> str:
        name = "h" if self.kind == HAT else "x"
        return f"{name}({self.layer},{self.index})"

    def to_dict(self) -> Dict:
        return {"kind": self.kind, "layer": self.layer, "index": self.index}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Var":
        return cls(layer=int(data["layer"]), kind=str(data["kind"]), index=int(data["index"]))


@dataclass(frozen=True)
class LinearConstraint:
    """Σ coeff·var <= rhs over neuron variables."""

    terms: Tuple[Tuple[Var, float], ...]
    rhs: float

    @classmethod
    def of(cls, terms: Mapping[Var, float], rhs: float) -> "LinearConstraint":
        cleaned = tuple(sorted((v, float(c)) for v, c in terms.items() if c != 0.0))
        return cls(terms=cleaned, rhs=float(rhs))

    def variables(self) -> List[Var]:
        return [v for v, _ in self.terms]

    def layers(self) -> Tuple[int, int]:
        """(lowest, highest) layer touched; (0, 0) for a constant row."""
        touched = [v.layer for v, _ in self.terms]
        if not touched:
            return 0, 0
        return min(touched), max(touched)

    def lhs(self, trace_pre: List[np.ndarray], trace_post: List[np.ndarray]) -> float:
        total = 0.0
        for var, coeff in self.terms:
            values = trace_post if var.kind == HAT else trace_pre
            total += coeff * float(values[var.layer][var.index])
        return total


def layer_vars(net: Network, layer: int, kind: str) -> List[Var]:
    width = net.widths[layer]
    return [Var(layer=layer, kind=kind, index=j) for j in range(width)]


def all_vars(net: Network) -> List[Var]:
    """Variables of the relaxed program, ordered ĥ(0), x(1), ĥ(1), ..., x(L)."""
    out: List[Var] = layer_vars(net, 0, HAT)
    for i in range(1, net.depth + 1):
        out.extend(layer_vars(net, i, PRE))
        if i < net.depth:
            out.extend(layer_vars(net, i, HAT))
    return out


def index_vars(variables: Iterable[Var]) -> Dict[Var, int]:
    return {v: k for k, v in enumerate(variables)}


def output_at_least(net: Network, threshold: float) -> LinearConstraint:
    """-x(L) <= -threshold: the output region a canonical query asks about."""
    return LinearConstraint.of({Var.pre(net.depth, 0): -1.0}, -float(threshold))
