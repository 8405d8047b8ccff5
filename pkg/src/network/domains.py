import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from src.network.model import DimensionError, Network


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionError("box lower and upper differ in length")
        bad = np.nonzero(lo > hi)[0]
        if bad.size:
            raise ValueError(f"box lower exceeds upper at index {int(bad[0])}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.lower.copy(), self.upper.copy()

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True, eq=False)
class LpBall:
    center: np.ndarray
    radius: float
    p: float = math.inf

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(-1)
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")
        if not self.p >= 1:
            raise ValueError(f"ball norm order must be >= 1, got {self.p}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "p", float(self.p))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def dual_norm_order(self) -> float:
        if math.isinf(self.p):
            return 1.0
        if self.p == 1.0:
            return math.inf
        return self.p / (self.p - 1.0)

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.center - self.radius, self.center + self.radius

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return float(np.linalg.norm(x - self.center, ord=self.p)) <= self.radius + tol

    def project(self, x: np.ndarray) -> np.ndarray:
        """Pull a point back onto the ball along the ray from the center."""
        if math.isinf(self.p):
            return np.clip(x, self.center - self.radius, self.center + self.radius)
        offset = x - self.center
        norm = float(np.linalg.norm(offset, ord=self.p))
        if norm <= self.radius:
            return x
        return self.center + offset * (self.radius / norm)

    def as_box(self) -> Optional[Box]:
        if math.isinf(self.p):
            lo, hi = self.bounding_box()
            return Box(lo, hi)
        return None


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """{x : A x + b <= 0}."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.A, dtype=float, ndmin=2)
        b = np.array(self.b, dtype=float).reshape(-1)
        if a.shape[0] != b.shape[0]:
            raise DimensionError("polyhedron A and b differ in row count")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(self.A @ x + self.b <= tol))

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        from src.bounds.simplex import bounding_box_of_polyhedron

        return bounding_box_of_polyhedron(self.A, self.b)


InputDomain = Union[Box, LpBall, Polyhedron]


@dataclass(frozen=True, eq=False)
class Query:
    """Does some x in the input domain drive N(x) beyond the threshold?

    direction '>' asks for N(x) > threshold and '<' for N(x) < threshold.
    """

    network: Network
    input_domain: InputDomain
    threshold: float = 0.0
    direction: str = ">"

    def __post_init__(self):
        if self.direction not in (">", "<"):
            raise ValueError(f"unknown output direction {self.direction!r}")
        if self.input_domain.dim != self.network.input_dim:
            raise DimensionError(
                f"input domain has dimension {self.input_domain.dim}, network expects {self.network.input_dim}"
            )
        if self.network.output_dim != 1:
            raise DimensionError("queries need a single output neuron")

    def canonical(self) -> "Query":
        """Equivalent query in the '>' form; '<' queries negate the output layer."""
        if self.direction == ">":
            return self
        return Query(
            network=self.network.negated(),
            input_domain=self.input_domain,
            threshold=-self.threshold,
            direction=">",
        )

    def is_violated_by(self, x: np.ndarray) -> bool:
        """True when x is a genuine witness: inside the domain and strictly past the threshold."""
        if not self.input_domain.contains(np.asarray(x, dtype=float)):
            return False
        value = float(self.network(x)[0])
        if self.direction == ">":
            return value > self.threshold
        return value < self.threshold
