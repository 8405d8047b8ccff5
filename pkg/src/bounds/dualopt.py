"""Dual lower bounds for linear objectives over the relaxed network intersected with a constraint polyhedron.

The dual variables are γ (one per polyhedron row) and the lower slopes α of the
unfixed neurons. Every (γ >= 0, α admissible) pair yields a valid lower bound,
so projected gradient ascent only ever affects tightness.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, Field

from src.bounds.relax import alpha_range
from src.bounds.sbt import SingleRelax
from src.bounds.simplex import argopt_over_polyhedron
from src.network.domains import Box, InputDomain, LpBall, Polyhedron
from src.network.model import Network
from src.network.variables import HAT, LinearConstraint, Var
from src.settings import PGD_DEFAULTS


logger = logging.getLogger(__name__)

DTYPE = torch.float64


class PgdConfig(BaseModel):
    iters: int = Field(default_factory=lambda: PGD_DEFAULTS["iters"], ge=1)
    step: float = Field(default_factory=lambda: PGD_DEFAULTS["step"], gt=0)
    decay: float = Field(default_factory=lambda: PGD_DEFAULTS["decay"], gt=0, le=1)
    optimize_alpha: bool = Field(default_factory=lambda: PGD_DEFAULTS["optimize_alpha"])
    optimizer: Literal["adam", "sgd"] = Field(default_factory=lambda: PGD_DEFAULTS["optimizer"])


@dataclass
class DensePolyhedron:
    hat: List[np.ndarray]
    pre: List[np.ndarray]
    d: np.ndarray

    @property
    def num_rows(self) -> int:
        return self.d.shape[0]


@dataclass
class ConstraintPolyhedron:
    """Rows Σ coeff·var <= rhs, i.e. Σ Ĉ(i)ĥ(i) + Σ C(i)x(i) + d <= 0 with d = -rhs."""

    rows: List[LinearConstraint] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def add(self, row: LinearConstraint) -> None:
        self.rows.append(row)

    def extended(self, extra: Sequence[LinearConstraint]) -> "ConstraintPolyhedron":
        return ConstraintPolyhedron(list(self.rows) + list(extra))

    def dense(self, net: Network) -> DensePolyhedron:
        L = net.depth
        widths = net.widths
        r = len(self.rows)
        hat = [np.zeros((r, widths[i])) for i in range(L)]
        pre = [np.zeros((r, 0))] + [np.zeros((r, widths[i])) for i in range(1, L + 1)]
        d = np.zeros(r)
        for k, row in enumerate(self.rows):
            d[k] = -row.rhs
            for var, coeff in row.terms:
                if var.kind == HAT and var.layer < L:
                    hat[var.layer][k, var.index] += coeff
                else:
                    pre[var.layer][k, var.index] += coeff
        return DensePolyhedron(hat, pre, d)


@dataclass
class Objective:
    """Σ ĉ(i)·ĥ(i) for i in 0..L-1 plus Σ c(i)·x(i) for i in 1..L; pre[0] is unused."""

    hat: List[np.ndarray]
    pre: List[np.ndarray]

    @classmethod
    def zeros(cls, net: Network) -> "Objective":
        widths = net.widths
        return cls([np.zeros(widths[i]) for i in range(net.depth)], [np.zeros(0)] + [np.zeros(widths[i]) for i in range(1, net.depth + 1)])

    @classmethod
    def from_terms(cls, net: Network, terms: Mapping[Var, float]) -> "Objective":
        obj = cls.zeros(net)
        for var, coeff in terms.items():
            if var.kind == HAT and var.layer < net.depth:
                obj.hat[var.layer][var.index] += coeff
            else:
                obj.pre[var.layer][var.index] += coeff
        return obj

    @classmethod
    def output(cls, net: Network, sign: float = 1.0) -> "Objective":
        obj = cls.zeros(net)
        obj.pre[net.depth][0] = sign
        return obj

    def is_zero(self) -> bool:
        return not any(np.any(v) for v in self.hat) and not any(np.any(v) for v in self.pre)


@dataclass
class DualState:
    gamma: np.ndarray
    alpha: List[np.ndarray]
    nu: Dict[int, np.ndarray]
    nu_hat: Dict[int, np.ndarray]
    value: float


def _t(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a, dtype=float), dtype=DTYPE)


def _dual_norm(c: torch.Tensor, q: float) -> torch.Tensor:
    if q == 1.0:
        return c.abs().sum()
    if math.isinf(q):
        return c.abs().max() if c.numel() else c.sum()
    s = (c.abs() ** q).sum()
    return s.clamp_min(1e-300) ** (1.0 / q)


def _infimum(c: torch.Tensor, din: InputDomain) -> torch.Tensor:
    if isinstance(din, Box):
        return torch.clamp(c, min=0.0) @ _t(din.lower) + torch.clamp(c, max=0.0) @ _t(din.upper)
    if isinstance(din, LpBall):
        return c @ _t(din.center) - din.radius * _dual_norm(c, din.dual_norm_order)
    if isinstance(din, Polyhedron):
        _, point = argopt_over_polyhedron(c.detach().numpy(), din.A, din.b, maximize=False)
        return c @ _t(point)
    raise TypeError(f"unsupported input domain {type(din).__name__}")


def infimum_over_domain(c: Sequence[float], din: InputDomain) -> float:
    """inf of c·x over the domain: exact for boxes and polyhedra, Hölder-exact for balls."""
    with torch.no_grad():
        return float(_infimum(_t(c), din))


class _DualProblem:
    def __init__(self, net: Network, din: InputDomain, relax: SingleRelax, poly: ConstraintPolyhedron, obj: Objective):
        self.net = net
        self.din = din
        self.L = net.depth
        self.W = [None] + [_t(layer.weights) for layer in net.layers]
        self.b = [None] + [_t(layer.bias) for layer in net.layers]
        self.ls = [None] + [_t(relax.lower_slope[i]) for i in range(1, self.L)]
        self.lo = [None] + [_t(relax.lower_offset[i]) for i in range(1, self.L)]
        self.us = [None] + [_t(relax.upper_slope[i]) for i in range(1, self.L)]
        self.uo = [None] + [_t(relax.upper_offset[i]) for i in range(1, self.L)]
        self.unfixed = [None] + [torch.as_tensor(relax.unfixed[i]) for i in range(1, self.L)]
        self.alpha_box = [None]
        for i in range(1, self.L):
            layer = net.layer(i)
            lo, hi = alpha_range(layer.activation, layer.slope)
            self.alpha_box.append((lo, hi))
        self.alpha0 = [np.zeros(0)] + [np.asarray(relax.alpha[i], dtype=float).copy() for i in range(1, self.L)]
        dense = poly.dense(net)
        self.num_rows = dense.num_rows
        self.Chat = [_t(m) for m in dense.hat]
        self.C = [None] + [_t(m) for m in dense.pre[1:]]
        self.d = _t(dense.d)
        self.chat = [_t(v) for v in obj.hat]
        self.c = [None] + [_t(v) for v in obj.pre[1:]]

    def check(self, gamma: torch.Tensor, alpha: Sequence[torch.Tensor]) -> None:
        if gamma.numel() != self.num_rows:
            raise ValueError(f"gamma has {gamma.numel()} entries for {self.num_rows} polyhedron rows")
        if gamma.numel() and float(gamma.min()) < 0.0:
            idx = int(torch.argmin(gamma))
            raise ValueError(f"gamma[{idx}] is negative")
        for i in range(1, self.L):
            lo, hi = self.alpha_box[i]
            a = alpha[i][self.unfixed[i]]
            if a.numel() and (float(a.min()) < lo - 1e-12 or float(a.max()) > hi + 1e-12):
                raise ValueError(f"alpha on layer {i} outside [{lo}, {hi}]")

    def value(self, gamma: torch.Tensor, alpha: Sequence[torch.Tensor]):
        L = self.L
        nu: Dict[int, torch.Tensor] = {}
        nu_hat: Dict[int, torch.Tensor] = {}
        nu[L] = -self.c[L] - self.C[L].T @ gamma
        const = -(nu[L] @ self.b[L])
        for i in range(L - 1, 0, -1):
            nh = self.W[i + 1].T @ nu[i + 1] - self.Chat[i].T @ gamma - self.chat[i]
            nu_hat[i] = nh
            Wl = torch.where(self.unfixed[i], alpha[i], self.ls[i])
            bl = torch.where(self.unfixed[i], torch.zeros_like(self.lo[i]), self.lo[i])
            pos = torch.relu(nh)
            neg = torch.relu(-nh)
            nu[i] = pos * self.us[i] - neg * Wl - self.C[i].T @ gamma - self.c[i]
            const = const - (pos @ self.uo[i] - neg @ bl) - nu[i] @ self.b[i]
        c_in = self.chat[0] - self.W[1].T @ nu[1] + self.Chat[0].T @ gamma
        g = _infimum(c_in, self.din) + const + gamma @ self.d
        return g, nu, nu_hat

    def state(self, gamma: torch.Tensor, alpha: Sequence[torch.Tensor]) -> DualState:
        with torch.no_grad():
            g, nu, nu_hat = self.value(gamma, alpha)
        return DualState(
            gamma=gamma.detach().numpy().copy(),
            alpha=[np.zeros(0)] + [alpha[i].detach().numpy().copy() for i in range(1, self.L)],
            nu={k: v.detach().numpy().copy() for k, v in nu.items()},
            nu_hat={k: v.detach().numpy().copy() for k, v in nu_hat.items()},
            value=float(g),
        )


def dual_value(
    net: Network,
    din: InputDomain,
    relax: SingleRelax,
    poly: ConstraintPolyhedron,
    obj: Objective,
    gamma: Optional[Sequence[float]] = None,
    alpha: Optional[Sequence[np.ndarray]] = None,
) -> Tuple[float, DualState]:
    """g(α, γ): a lower bound on min obj over the relaxed network subject to poly."""
    problem = _DualProblem(net, din, relax, poly, obj)
    g_t = torch.zeros(problem.num_rows, dtype=DTYPE) if gamma is None else _t(gamma).reshape(-1)
    a_src = problem.alpha0 if alpha is None else alpha
    a_t = [torch.zeros(0, dtype=DTYPE)] + [_t(a_src[i]) for i in range(1, problem.L)]
    problem.check(g_t, a_t)
    state = problem.state(g_t, a_t)
    return state.value, state


def maximize_dual(
    net: Network,
    din: InputDomain,
    relax: SingleRelax,
    poly: ConstraintPolyhedron,
    obj: Objective,
    pgd: Optional[PgdConfig] = None,
) -> Tuple[float, DualState]:
    """Projected gradient ascent on (γ, α); returns the best value seen, starting point included."""
    pgd = pgd or PgdConfig()
    problem = _DualProblem(net, din, relax, poly, obj)
    gamma = torch.zeros(problem.num_rows, dtype=DTYPE, requires_grad=problem.num_rows > 0)
    alpha = [torch.zeros(0, dtype=DTYPE)]
    params = [gamma] if problem.num_rows else []
    for i in range(1, problem.L):
        a = _t(problem.alpha0[i]).clone()
        if pgd.optimize_alpha and bool(problem.unfixed[i].any()):
            a.requires_grad_(True)
            params.append(a)
        alpha.append(a)

    if not params:
        state = problem.state(gamma.detach(), alpha)
        return state.value, state

    if pgd.optimizer == "adam":
        opt = torch.optim.Adam(params, lr=pgd.step)
    else:
        opt = torch.optim.SGD(params, lr=pgd.step)
    schedule = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=pgd.decay)

    best_value = -math.inf
    best_gamma = gamma.detach().clone()
    best_alpha = [a.detach().clone() for a in alpha]
    for it in range(pgd.iters + 1):
        g, _, _ = problem.value(gamma, alpha)
        value = float(g.detach())
        if value > best_value:
            best_value = value
            best_gamma = gamma.detach().clone()
            best_alpha = [a.detach().clone() for a in alpha]
        if it == pgd.iters:
            break
        opt.zero_grad()
        (-g).backward()
        opt.step()
        schedule.step()
        with torch.no_grad():
            if problem.num_rows:
                gamma.clamp_(min=0.0)
            for i in range(1, problem.L):
                lo, hi = problem.alpha_box[i]
                alpha[i].clamp_(lo, hi)

    state = problem.state(best_gamma, best_alpha)
    logger.debug("dual ascent best %.6f after %d iterations", state.value, pgd.iters)
    return state.value, state


def output_lower_bound(net: Network, din: InputDomain, relax: SingleRelax, alpha: Optional[Sequence[np.ndarray]] = None) -> float:
    """Back-substituted lower bound of x(L) under the given slopes (the γ = 0 dual)."""
    value, _ = dual_value(net, din, relax, ConstraintPolyhedron(), Objective.output(net), alpha=alpha)
    return value
