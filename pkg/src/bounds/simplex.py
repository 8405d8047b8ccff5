"""Dense linear programming: a two-phase tableau simplex plus optional HiGHS and external-process backends."""

import json
import logging
import shlex
import subprocess
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from src.settings import LP_DEFAULTS


logger = logging.getLogger(__name__)


class LpStalledError(RuntimeError):
    pass


class UnboundedLpError(RuntimeError):
    pass


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


SENSES = ("<=", "=", ">=")


class LpConfig(BaseModel):
    backend: str = Field(default_factory=lambda: LP_DEFAULTS["backend"], pattern="^(simplex|highs|external)$")
    command: str = Field(default_factory=lambda: LP_DEFAULTS["command"])
    max_iterations: int = Field(default_factory=lambda: LP_DEFAULTS["max_iterations"], ge=1)
    pivot_tol: float = Field(default_factory=lambda: LP_DEFAULTS["pivot_tol"], gt=0)
    timeout: float = Field(default=30.0, gt=0)


@dataclass
class LinearProgram:
    """Optimize objective·x subject to rows (coeffs, sense, rhs) and lower <= x <= upper."""

    objective: np.ndarray
    maximize: bool = False
    rows: List[Tuple[np.ndarray, str, float]] = field(default_factory=list)
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        n = self.objective.shape[0]
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).copy()
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).copy()
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("variable bounds do not match the objective length")

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]

    def add_row(self, coeffs: Sequence[float], sense: str, rhs: float) -> None:
        if sense not in SENSES:
            raise ValueError(f"unknown constraint sense {sense!r}")
        row = np.asarray(coeffs, dtype=float).reshape(-1)
        if row.shape[0] != self.num_vars:
            raise ValueError(f"row has {row.shape[0]} coefficients, program has {self.num_vars} variables")
        if not (np.all(np.isfinite(row)) and np.isfinite(rhs)):
            raise ValueError("non-finite constraint coefficient")
        self.rows.append((row, sense, float(rhs)))

    def with_objective(self, objective: Sequence[float], maximize: bool = False) -> "LinearProgram":
        """Same feasible set, new objective; rows are shared, not copied."""
        return LinearProgram(np.asarray(objective, dtype=float), maximize, self.rows, self.lower, self.upper)

    def is_feasible_point(self, x: np.ndarray, tol: float = 1e-7) -> bool:
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            return False
        for coeffs, sense, rhs in self.rows:
            lhs = float(coeffs @ x)
            if sense == "<=" and lhs > rhs + tol:
                return False
            if sense == ">=" and lhs < rhs - tol:
                return False
            if sense == "=" and abs(lhs - rhs) > tol:
                return False
        return True

    def to_dict(self) -> dict:
        def _num(v):
            return None if not np.isfinite(v) else float(v)

        return {
            "objective": self.objective.tolist(),
            "maximize": self.maximize,
            "rows": [{"coeffs": c.tolist(), "sense": s, "rhs": r} for c, s, r in self.rows],
            "lower": [_num(v) for v in self.lower],
            "upper": [_num(v) for v in self.upper],
        }


@dataclass
class LpOutcome:
    status: LpStatus
    value: float = float("nan")
    point: Optional[np.ndarray] = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == LpStatus.OPTIMAL


def _standard_form(lp: LinearProgram):
    """Rewrite x = offset + M·y with y >= 0; returns (M, offset, rows over y)."""
    n = lp.num_vars
    columns: List[Tuple[int, float]] = []
    offset = np.zeros(n)
    upper_rows: List[Tuple[int, float]] = []
    for j in range(n):
        l, u = lp.lower[j], lp.upper[j]
        if l > u:
            return None
        if np.isfinite(l):
            offset[j] = l
            columns.append((j, 1.0))
            if np.isfinite(u):
                upper_rows.append((len(columns) - 1, u - l))
        elif np.isfinite(u):
            offset[j] = u
            columns.append((j, -1.0))
        else:
            columns.append((j, 1.0))
            columns.append((j, -1.0))
    M = np.zeros((n, len(columns)))
    for k, (j, sign) in enumerate(columns):
        M[j, k] = sign
    rows: List[Tuple[np.ndarray, str, float]] = []
    for coeffs, sense, rhs in lp.rows:
        rows.append((coeffs @ M, sense, rhs - float(coeffs @ offset)))
    for k, cap in upper_rows:
        e = np.zeros(len(columns))
        e[k] = 1.0
        rows.append((e, "<=", cap))
    return M, offset, rows


def _pivot(T: np.ndarray, i: int, j: int) -> None:
    T[i] /= T[i, j]
    col = T[:, j].copy()
    col[i] = 0.0
    T -= np.outer(col, T[i])


def _run(T: np.ndarray, basis: List[int], ncols: int, budget: List[int], tol: float) -> LpStatus:
    """Bland's-rule primal simplex on a tableau whose last row holds reduced costs."""
    m = T.shape[0] - 1
    while True:
        reduced = T[-1, :ncols]
        entering = np.nonzero(reduced < -tol)[0]
        if entering.size == 0:
            return LpStatus.OPTIMAL
        j = int(entering[0])
        col = T[:m, j]
        eligible = np.nonzero(col > tol)[0]
        if eligible.size == 0:
            return LpStatus.UNBOUNDED
        ratios = T[eligible, -1] / col[eligible]
        best = ratios.min()
        ties = eligible[ratios <= best + tol * (1.0 + abs(best))]
        i = int(min(ties, key=lambda r: basis[r]))
        _pivot(T, i, j)
        basis[i] = j
        budget[0] += 1
        if budget[0] > budget[1]:
            raise LpStalledError(f"simplex exceeded {budget[1]} pivots")


def simplex_solve(lp: LinearProgram, max_iterations: Optional[int] = None, pivot_tol: Optional[float] = None) -> LpOutcome:
    """Two-phase dense tableau simplex with Bland's anti-cycling rule."""
    max_iterations = max_iterations or LP_DEFAULTS["max_iterations"]
    tol = pivot_tol or LP_DEFAULTS["pivot_tol"]
    form = _standard_form(lp)
    if form is None:
        return LpOutcome(LpStatus.INFEASIBLE)
    M, offset, rows = form
    N = M.shape[1]
    m = len(rows)
    cost = lp.objective @ M
    if lp.maximize:
        cost = -cost
    if m == 0:
        if np.any(cost < -tol):
            return LpOutcome(LpStatus.UNBOUNDED)
        x = offset.copy()
        return LpOutcome(LpStatus.OPTIMAL, float(lp.objective @ x), x, 0)

    n_slack = sum(1 for _, s, _ in rows if s != "=")
    width = N + n_slack + m
    T = np.zeros((m + 1, width + 1))
    basis: List[int] = []
    slack = N
    scale = 1.0
    for i, (coeffs, sense, rhs) in enumerate(rows):
        T[i, :N] = coeffs
        T[i, -1] = rhs
        slack_col = None
        if sense != "=":
            T[i, slack] = 1.0 if sense == "<=" else -1.0
            slack_col = slack
            slack += 1
        if rhs < 0:
            T[i, :-1] *= -1.0
            T[i, -1] *= -1.0
        scale = max(scale, abs(T[i, -1]))
        if slack_col is not None and T[i, slack_col] > 0:
            basis.append(slack_col)
        else:
            basis.append(N + n_slack + i)
            T[i, N + n_slack + i] = 1.0

    budget = [0, max_iterations]
    artificial = [i for i in range(m) if basis[i] >= N + n_slack]
    if artificial:
        T[-1, :] = 0.0
        for i in artificial:
            T[-1, :] -= T[i, :]
            T[-1, basis[i]] = 0.0
        _run(T, basis, width, budget, tol)
        if -T[-1, -1] > 1e-7 * scale:
            return LpOutcome(LpStatus.INFEASIBLE, iterations=budget[0])
        keep = []
        for i in range(m):
            if basis[i] >= N + n_slack:
                candidates = np.nonzero(np.abs(T[i, : N + n_slack]) > tol)[0]
                if candidates.size == 0:
                    continue
                _pivot(T, i, int(candidates[0]))
                basis[i] = int(candidates[0])
            keep.append(i)
        T = np.vstack([T[keep], T[-1:]])
        basis = [basis[i] for i in keep]
        T = np.hstack([T[:, : N + n_slack], T[:, -1:]])
    else:
        T = np.hstack([T[:, : N + n_slack], T[:, -1:]])

    full_cost = np.zeros(N + n_slack)
    full_cost[:N] = cost
    T[-1, :] = 0.0
    T[-1, :-1] = full_cost
    for i, b in enumerate(basis):
        if full_cost[b] != 0.0:
            T[-1, :] -= full_cost[b] * T[i, :]
    status = _run(T, basis, N + n_slack, budget, tol)
    if status == LpStatus.UNBOUNDED:
        return LpOutcome(LpStatus.UNBOUNDED, iterations=budget[0])
    y = np.zeros(N + n_slack)
    for i, b in enumerate(basis):
        y[b] = T[i, -1]
    x = offset + M @ y[:N]
    return LpOutcome(LpStatus.OPTIMAL, float(lp.objective @ x), x, budget[0])


def highs_solve(lp: LinearProgram) -> LpOutcome:
    from scipy.optimize import linprog

    c = -lp.objective if lp.maximize else lp.objective
    ub = [(r, b) for r, s, b in lp.rows if s == "<="] + [(-r, -b) for r, s, b in lp.rows if s == ">="]
    eq = [(r, b) for r, s, b in lp.rows if s == "="]
    bounds = [
        (None if not np.isfinite(l) else l, None if not np.isfinite(u) else u) for l, u in zip(lp.lower, lp.upper)
    ]
    res = linprog(
        c,
        A_ub=np.array([r for r, _ in ub]) if ub else None,
        b_ub=np.array([b for _, b in ub]) if ub else None,
        A_eq=np.array([r for r, _ in eq]) if eq else None,
        b_eq=np.array([b for _, b in eq]) if eq else None,
        bounds=bounds,
        method="highs",
    )
    if res.status == 0:
        x = np.asarray(res.x, dtype=float)
        return LpOutcome(LpStatus.OPTIMAL, float(lp.objective @ x), x, int(getattr(res, "nit", 0)))
    if res.status == 2:
        return LpOutcome(LpStatus.INFEASIBLE)
    if res.status == 3:
        return LpOutcome(LpStatus.UNBOUNDED)
    raise LpStalledError(f"highs stopped with status {res.status}: {res.message}")


@retry(
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.2, max=2),
    retry=retry_if_exception_type((subprocess.SubprocessError, OSError, ValueError)),
    reraise=True,
)
def _call_external(command: str, payload: str, timeout: float) -> dict:
    proc = subprocess.run(shlex.split(command), input=payload, capture_output=True, text=True, timeout=timeout, check=True)
    return json.loads(proc.stdout)


def external_solve(lp: LinearProgram, command: str, timeout: float = 30.0) -> LpOutcome:
    """Hand the program to an external solver process as JSON on stdin.

    The process answers on stdout with {"status": "optimal"|"infeasible"|"unbounded",
    "value": float, "point": [...]}.
    """
    if not command.strip():
        raise LpStalledError("external LP backend selected but no command configured")
    try:
        reply = _call_external(command, json.dumps(lp.to_dict()), timeout)
    except (subprocess.SubprocessError, OSError, ValueError) as e:
        raise LpStalledError(f"external LP solver failed: {e}") from e
    status = LpStatus(str(reply.get("status", "")).lower())
    if status != LpStatus.OPTIMAL:
        return LpOutcome(status)
    point = np.asarray(reply.get("point", []), dtype=float)
    value = float(lp.objective @ point) if point.shape == lp.objective.shape else float(reply.get("value", "nan"))
    return LpOutcome(status, value, point if point.size else None, int(reply.get("iterations", 0)))


def solve(lp: LinearProgram, config: Optional[LpConfig] = None) -> LpOutcome:
    config = config or LpConfig()
    if config.backend == "highs":
        return highs_solve(lp)
    if config.backend == "external":
        return external_solve(lp, config.command, config.timeout)
    return simplex_solve(lp, config.max_iterations, config.pivot_tol)


def polyhedron_program(A: np.ndarray, b: np.ndarray, objective: np.ndarray, maximize: bool = False) -> LinearProgram:
    """{x : A x + b <= 0} with the given objective."""
    lp = LinearProgram(np.asarray(objective, dtype=float), maximize)
    for row, off in zip(np.atleast_2d(A), np.asarray(b, dtype=float).reshape(-1)):
        lp.add_row(row, "<=", -float(off))
    return lp


def optimize_over_polyhedron(
    c: np.ndarray, A: np.ndarray, b: np.ndarray, maximize: bool = False, config: Optional[LpConfig] = None
) -> float:
    return argopt_over_polyhedron(c, A, b, maximize, config)[0]


def argopt_over_polyhedron(
    c: np.ndarray, A: np.ndarray, b: np.ndarray, maximize: bool = False, config: Optional[LpConfig] = None
) -> Tuple[float, np.ndarray]:
    outcome = solve(polyhedron_program(A, b, c, maximize), config)
    if outcome.status == LpStatus.UNBOUNDED:
        raise UnboundedLpError("objective is unbounded over the polyhedron")
    if outcome.status == LpStatus.INFEASIBLE:
        raise ValueError("polyhedron is empty")
    return outcome.value, outcome.point


def bounding_box_of_polyhedron(A: np.ndarray, b: np.ndarray, config: Optional[LpConfig] = None) -> Tuple[np.ndarray, np.ndarray]:
    n = np.atleast_2d(A).shape[1]
    lo, hi = np.zeros(n), np.zeros(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        lo[j] = optimize_over_polyhedron(e, A, b, maximize=False, config=config)
        hi[j] = optimize_over_polyhedron(e, A, b, maximize=True, config=config)
    return lo, hi
