"""Which unfixed neurons get multi-neuron planes."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.bounds.relax import is_unfixed, phases
from src.bounds.sbt import BoundsState, NeuronId, SingleRelax, backsubstitute, concretize, restrict_to_phases
from src.network.model import Network


logger = logging.getLogger(__name__)

VARIANTS = ("pmnr", "pmnr_random", "pmnr_all")


class NothingToSelect(LookupError):
    """No hidden layer has an unfixed neuron left."""


@dataclass(frozen=True)
class NeuronGroup:
    layer: int
    neurons: Tuple[int, ...]
    scores: Tuple[float, ...] = ()

    @property
    def ids(self) -> List[NeuronId]:
        return [(self.layer, j) for j in self.neurons]

    def __len__(self) -> int:
        return len(self.neurons)


def unfixed_neurons(net: Network, bounds: BoundsState) -> List[NeuronId]:
    out = []
    for i in net.hidden_layers():
        layer = net.layer(i)
        for j in range(layer.out_dim):
            if is_unfixed(layer.activation, float(bounds.pre_lower[i][j]), float(bounds.pre_upper[i][j])):
                out.append((i, j))
    return out


def span_scores(net: Network, bounds: BoundsState) -> Dict[NeuronId, float]:
    """u - l per unfixed neuron."""
    return {(i, j): float(bounds.pre_upper[i][j] - bounds.pre_lower[i][j]) for i, j in unfixed_neurons(net, bounds)}


def _output_range(net: Network, relax: SingleRelax, bounds: BoundsState, layer: int) -> float:
    L = net.depth
    e = np.ones(1)
    box = (bounds.pre_lower[layer], bounds.pre_upper[layer])
    hi = concretize(backsubstitute(net, relax, (L, e, 0.0, "upper"), down_to=layer), box)
    lo = concretize(backsubstitute(net, relax, (L, e, 0.0, "lower"), down_to=layer), box)
    return max(hi - lo, 0.0)


def nsse_scores(net: Network, bounds: BoundsState, relax: SingleRelax) -> Dict[NeuronId, float]:
    """Mean width of the output interval over each phase of the neuron, the rest of the network relaxed.

    The output is back-substituted only to the neuron's own layer and
    concretized over that layer's pre bounds, with the neuron cut to the phase.
    """
    scores: Dict[NeuronId, float] = {}
    for i, j in unfixed_neurons(net, bounds):
        layer = net.layer(i)
        widths = []
        for phase in phases(layer.activation, float(bounds.pre_lower[i][j]), float(bounds.pre_upper[i][j]), layer.slope):
            fixing = {(i, j): phase.id}
            phased_bounds = restrict_to_phases(net, bounds, fixing)
            phased_relax = relax.with_phase(net, bounds, fixing)
            widths.append(_output_range(net, phased_relax, phased_bounds, i))
        scores[(i, j)] = float(np.mean(widths))
    logger.debug("nsse scores %s", scores)
    return scores


def select_neurons(
    scores: Dict[NeuronId, float],
    d: int,
    variant: str = "pmnr",
    rng: Optional[np.random.Generator] = None,
) -> NeuronGroup:
    """Pick one layer and up to d of its unfixed neurons.

    'pmnr' takes the layer with the largest score sum (lowest index on ties)
    and its top-d neurons; 'pmnr_random' draws both the layer and the
    neurons from rng. Neuron ids come back sorted.
    """
    if not scores:
        raise NothingToSelect("no unfixed neurons to select from")
    by_layer: Dict[int, List[Tuple[int, float]]] = {}
    for (i, j), s in sorted(scores.items()):
        by_layer.setdefault(i, []).append((j, s))

    if variant == "pmnr_random":
        rng = rng if rng is not None else np.random.default_rng(0)
        layers = sorted(by_layer)
        layer = int(layers[int(rng.integers(len(layers)))])
        members = [j for j, _ in by_layer[layer]]
        picked = rng.choice(len(members), size=min(d, len(members)), replace=False)
        chosen = sorted(members[int(k)] for k in picked)
    elif variant == "pmnr":
        layer = max(sorted(by_layer), key=lambda i: (sum(s for _, s in by_layer[i]), -i))
        ranked = sorted(by_layer[layer], key=lambda js: (-js[1], js[0]))
        chosen = sorted(j for j, _ in ranked[:d])
    else:
        raise ValueError(f"unknown selection variant {variant!r}")
    lookup = dict(by_layer[layer])
    return NeuronGroup(layer=layer, neurons=tuple(chosen), scores=tuple(lookup[j] for j in chosen))


def pmnr_all_groups(net: Network, bounds: BoundsState, d: int) -> List[NeuronGroup]:
    """Sliding windows of d consecutive unfixed neurons (by index) in every hidden layer."""
    per_layer: Dict[int, List[int]] = {}
    for i, j in unfixed_neurons(net, bounds):
        per_layer.setdefault(i, []).append(j)
    groups = []
    for i in sorted(per_layer):
        ids = per_layer[i]
        for start in range(len(ids) - d + 1):
            groups.append(NeuronGroup(layer=i, neurons=tuple(ids[start:start + d])))
    return groups
