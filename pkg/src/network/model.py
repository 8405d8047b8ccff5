from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np


class DimensionError(ValueError):
    pass


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    ABS = "abs"


def activate(kind: Activation, x: np.ndarray, slope: float = 0.0) -> np.ndarray:
    if kind == Activation.IDENTITY:
        return np.array(x, dtype=float)
    if kind == Activation.RELU:
        return np.maximum(x, 0.0)
    if kind == Activation.LEAKY_RELU:
        return np.where(x >= 0.0, x, slope * x)
    if kind == Activation.ABS:
        return np.abs(x)
    raise ValueError(f"unsupported activation: {kind}")


@dataclass(frozen=True, eq=False)
class Layer:
    """One affine map followed by an element-wise activation.

    Weights are row-major: one row per output neuron.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.IDENTITY
    slope: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, ndmin=2)
        b = np.array(self.bias, dtype=float).reshape(-1)
        if w.shape[0] != b.shape[0]:
            raise DimensionError(f"bias has length {b.shape[0]} but weights have {w.shape[0]} rows")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite weight or bias")
        if self.activation == Activation.LEAKY_RELU and not (0.0 < self.slope < 1.0):
            raise ValueError(f"leaky_relu slope must lie in (0, 1), got {self.slope}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Layer):
            return NotImplemented
        return (
            self.activation == other.activation
            and self.slope == other.slope
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )


@dataclass(frozen=True, eq=False)
class Trace:
    """Exact neuron values of one forward evaluation.

    pre[i] is x(i) and post[i] is h(i); pre[0] and post[0] are the input,
    post[L] equals pre[L] since the output layer is affine only.
    """

    pre: List[np.ndarray]
    post: List[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.pre[-1]


@dataclass(frozen=True, eq=False)
class Network:
    layers: Tuple[Layer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError("network has no layers")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise DimensionError(
                    f"layer {i + 1} expects {layers[i].in_dim} inputs but layer {i} has width {layers[i - 1].out_dim}"
                )
        if layers[-1].activation != Activation.IDENTITY:
            raise ValueError("the output layer must have identity activation")
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        """L: number of affine layers; neurons live in layers 1..L."""
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def widths(self) -> List[int]:
        """n_0..n_L."""
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    def layer(self, i: int) -> Layer:
        """1-based access to W(i), b(i), sigma(i)."""
        if not 1 <= i <= self.depth:
            raise IndexError(f"layer index {i} outside 1..{self.depth}")
        return self.layers[i - 1]

    def hidden_layers(self) -> range:
        return range(1, self.depth)

    def forward(self, x: Sequence[float]) -> Tuple[np.ndarray, Trace]:
        h = np.array(x, dtype=float).reshape(-1)
        if h.shape[0] != self.input_dim:
            raise DimensionError(f"input has dimension {h.shape[0]}, network expects {self.input_dim}")
        pre: List[np.ndarray] = [h.copy()]
        post: List[np.ndarray] = [h.copy()]
        for layer in self.layers:
            z = layer.weights @ h + layer.bias
            h = activate(layer.activation, z, layer.slope)
            pre.append(z)
            post.append(h)
        return h.copy(), Trace(pre=pre, post=post)

    def __call__(self, x: Sequence[float]) -> np.ndarray:
        return self.forward(x)[0]

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(a == b for a, b in zip(self.layers, other.layers))

    def negated(self) -> "Network":
        """Same network with the output sign flipped (used to canonicalize '<' queries)."""
        last = self.layers[-1]
        flipped = Layer(weights=-last.weights, bias=-last.bias, activation=last.activation, slope=last.slope)
        return Network(layers=self.layers[:-1] + (flipped,))


def forward(net: Network, x: Sequence[float]) -> Tuple[np.ndarray, Trace]:
    return net.forward(x)
