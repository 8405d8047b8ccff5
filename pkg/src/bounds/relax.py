"""Single-neuron linear relaxations and phase splits for the supported activations."""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.network.model import Activation, activate


@dataclass(frozen=True)
class NeuronRelax:
    """lower_slope·x + lower_offset <= σ(x) <= upper_slope·x + upper_offset on [l, u]."""

    lower_slope: float
    lower_offset: float
    upper_slope: float
    upper_offset: float

    def lower(self, x):
        return self.lower_slope * x + self.lower_offset

    def upper(self, x):
        return self.upper_slope * x + self.upper_offset

    def is_exact(self) -> bool:
        return self.lower_slope == self.upper_slope and self.lower_offset == self.upper_offset


IDENTITY_RELAX = NeuronRelax(1.0, 0.0, 1.0, 0.0)


@dataclass(frozen=True)
class Phase:
    id: int
    name: str
    pre_lower: float
    pre_upper: float
    exact_relax: NeuronRelax


def is_unfixed(kind: Activation, l: float, u: float) -> bool:
    if l > u:
        raise ValueError(f"lower bound {l} exceeds upper bound {u}")
    if kind == Activation.IDENTITY:
        return False
    return l < 0.0 < u


def alpha_range(kind: Activation, slope: float = 0.0) -> Tuple[float, float]:
    if kind == Activation.RELU:
        return 0.0, 1.0
    if kind == Activation.LEAKY_RELU:
        return slope, 1.0
    if kind == Activation.ABS:
        return -1.0, 1.0
    return 1.0, 1.0


def default_alpha(kind: Activation, l: float, u: float, slope: float = 0.0) -> float:
    """Area-minimizing lower slope: the steeper line when the positive side dominates."""
    if kind == Activation.RELU:
        return 1.0 if u >= -l else 0.0
    if kind == Activation.LEAKY_RELU:
        return 1.0 if u >= -l else slope
    if kind == Activation.ABS:
        return 0.0
    return 1.0


def _segment(kind: Activation, negative: bool, slope: float) -> NeuronRelax:
    if not negative or kind == Activation.IDENTITY:
        return IDENTITY_RELAX
    if kind == Activation.RELU:
        return NeuronRelax(0.0, 0.0, 0.0, 0.0)
    if kind == Activation.LEAKY_RELU:
        return NeuronRelax(slope, 0.0, slope, 0.0)
    return NeuronRelax(-1.0, 0.0, -1.0, 0.0)


def relax_neuron(
    kind: Activation, l: float, u: float, alpha: Optional[float] = None, slope: float = 0.0
) -> NeuronRelax:
    """Linear lower and upper bounds of σ on [l, u].

    Fixed neurons (l >= 0 or u <= 0) get their exact segment. Unfixed ones get
    the α-sloped lower line through the origin and the tightest upper line the
    activation allows (the chord for ReLU/LeakyReLU, the constant max(-l, u) for Abs).
    """
    kind = Activation(kind)
    if kind == Activation.IDENTITY:
        if l > u:
            raise ValueError(f"lower bound {l} exceeds upper bound {u}")
        return IDENTITY_RELAX
    unfixed = is_unfixed(kind, l, u)
    lo, hi = alpha_range(kind, slope)
    if alpha is None:
        alpha = default_alpha(kind, l, u, slope)
    elif not lo - 1e-12 <= alpha <= hi + 1e-12:
        raise ValueError(f"alpha {alpha} outside [{lo}, {hi}] for {kind.value}")
    if not unfixed:
        return _segment(kind, negative=u <= 0.0 and l < 0.0, slope=slope)
    alpha = min(max(alpha, lo), hi)
    if kind == Activation.ABS:
        return NeuronRelax(alpha, 0.0, 0.0, max(-l, u))
    low_value = slope * l if kind == Activation.LEAKY_RELU else 0.0
    chord = (u - low_value) / (u - l)
    return NeuronRelax(alpha, 0.0, chord, u - chord * u)


def phases(kind: Activation, l: float, u: float, slope: float = 0.0) -> List[Phase]:
    """Linear segments of σ met on [l, u]; a fixed neuron has a single phase."""
    kind = Activation(kind)
    if not is_unfixed(kind, l, u):
        negative = kind != Activation.IDENTITY and u <= 0.0 and l < 0.0
        name = "negative" if negative else "positive"
        return [Phase(0 if negative else 1, name, l, u, _segment(kind, negative, slope))]
    names = ("inactive", "active") if kind in (Activation.RELU, Activation.LEAKY_RELU) else ("negative", "positive")
    return [
        Phase(0, names[0], l, 0.0, _segment(kind, True, slope)),
        Phase(1, names[1], 0.0, u, _segment(kind, False, slope)),
    ]


def phase_interval(phase_id: int, l: float, u: float) -> Tuple[float, float]:
    """Pre-activation restriction of an unfixed neuron to one of its two phases."""
    if phase_id == 0:
        return l, min(u, 0.0)
    return max(l, 0.0), u


def check_sound(kind: Activation, relax: NeuronRelax, l: float, u: float, slope: float = 0.0, samples: int = 1000) -> float:
    """Largest violation of the relaxation over an even grid of [l, u]; 0 when sound."""
    xs = np.linspace(l, u, samples)
    ys = activate(kind, xs, slope)
    below = np.max(relax.lower(xs) - ys)
    above = np.max(ys - relax.upper(xs))
    return float(max(below, above, 0.0))
