"""Small hand-built and random verification instances."""

from typing import List, Optional, Sequence

import numpy as np

from src.network.domains import Box, Query
from src.network.model import Activation, Layer, Network


def running_example_network() -> Network:
    """Two inputs, an Abs layer of three, a ReLU layer of two, one output."""
    return Network(
        layers=(
            Layer(weights=[[1.0, 0.0], [2.0, -3.0], [0.0, 1.0]], bias=[1.0, 0.0, 0.0], activation=Activation.ABS),
            Layer(weights=[[1.0, 1.0, -1.0], [-1.0, 1.0, -5.0]], bias=[0.0, 2.0], activation=Activation.RELU),
            Layer(weights=[[-1.0, -3.0]], bias=[26.1], activation=Activation.IDENTITY),
        )
    )


def running_example_query(threshold: float = 0.0, direction: str = "<") -> Query:
    """Is N(x) < threshold anywhere on [-1, 1]^2?  It is not: N ranges over [12.1, 26.1]."""
    return Query(
        network=running_example_network(),
        input_domain=Box(lower=[-1.0, -1.0], upper=[1.0, 1.0]),
        threshold=threshold,
        direction=direction,
    )


def random_network(
    seed: int,
    input_dim: int = 2,
    hidden: Sequence[int] = (3, 3),
    activations: Optional[Sequence[Activation]] = None,
    weight_scale: float = 1.0,
    leaky_slope: float = 0.1,
) -> Network:
    """Gaussian weights and biases; each hidden layer draws its activation from activations."""
    rng = np.random.default_rng(seed)
    choices = list(activations) if activations else [Activation.RELU]
    layers: List[Layer] = []
    fan_in = input_dim
    for width in hidden:
        kind = Activation(choices[int(rng.integers(len(choices)))])
        layers.append(
            Layer(
                weights=rng.normal(0.0, weight_scale, size=(width, fan_in)),
                bias=rng.normal(0.0, 0.5 * weight_scale, size=width),
                activation=kind,
                slope=leaky_slope if kind == Activation.LEAKY_RELU else 0.0,
            )
        )
        fan_in = width
    layers.append(Layer(weights=rng.normal(0.0, weight_scale, size=(1, fan_in)), bias=rng.normal(0.0, 0.5, size=1)))
    return Network(layers=tuple(layers))


def random_query(
    seed: int,
    input_dim: int = 2,
    hidden: Sequence[int] = (3, 3),
    activations: Optional[Sequence[Activation]] = None,
    radius: float = 1.0,
    probes: int = 64,
) -> Query:
    """A random network on a random box, with the threshold placed among sampled outputs.

    Thresholds sit between the sampled minimum and maximum (or just past the
    extreme for about a third of the seeds), so a suite mixes SAT and UNSAT.
    """
    rng = np.random.default_rng(seed + 7919)
    net = random_network(seed, input_dim, hidden, activations)
    center = rng.uniform(-1.0, 1.0, size=input_dim)
    half = rng.uniform(0.2, 1.0, size=input_dim) * radius
    box = Box(lower=center - half, upper=center + half)
    samples = rng.uniform(box.lower, box.upper, size=(probes, input_dim))
    outputs = np.array([float(net(x)[0]) for x in samples])
    direction = ">" if rng.random() < 0.5 else "<"
    lo, hi = float(outputs.min()), float(outputs.max())
    span = max(hi - lo, 1e-3)
    if rng.random() < 0.35:
        threshold = hi + 0.25 * span if direction == ">" else lo - 0.25 * span
    else:
        threshold = float(rng.uniform(lo, hi))
    return Query(network=net, input_domain=box, threshold=threshold, direction=direction)


def random_suite(count: int, seed: int = 0, **kwargs) -> List[Query]:
    return [random_query(seed + k, **kwargs) for k in range(count)]
