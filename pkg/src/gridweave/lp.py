"""Self-contained bounded-variable primal simplex solver.

Solves  min c.x  s.t.  A x {<=,=,>=} b,  l <= x <= u  (infinite bounds allowed)
with a dense tableau, Dantzig pricing and a Bland anti-cycling fallback.
The controller subproblems produced by `mpc` are small (a few hundred
variables), so no sparsity machinery is used.

A triangular crash basis is constructed from the row structure before phase 1;
for the state-space shaped problems emitted by `devices` this usually yields a
feasible starting basis and phase 1 is skipped entirely.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

try:  # the hot pivot loop is compiled when numba is available
    from numba import njit as _njit
except ImportError:  # pragma: no cover - plain-python fallback
    def _njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

__all__ = [
    "LpProblem",
    "LpRow",
    "LpSolution",
    "LpStatus",
    "LpBuilder",
    "solve_lp",
    "dump_mps",
    "MaxIterationsExceeded",
]

INF = math.inf

# numerical tolerances
_PIVOT_TOL = 1e-9
_COST_TOL = 1e-9
_FEAS_TOL = 1e-8
_DEGEN_STEP_TOL = 1e-10
_BLAND_AFTER = 500  # degenerate pivots before switching to Bland's rule


class MaxIterationsExceeded(RuntimeError):
    """Raised when the pivot limit is hit; signals numerical pathology."""


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LpRow:
    """One linear constraint: sparse coefficients, relation and right-hand side."""

    coeffs: tuple[tuple[int, float], ...]
    relation: str  # "<=", "=" or ">="
    rhs: float

    def __post_init__(self) -> None:
        if self.relation not in ("<=", "=", ">="):
            raise ValueError(f"unknown relation {self.relation!r}")


@dataclass(frozen=True)
class LpProblem:
    n_vars: int
    objective: tuple[float, ...]
    rows: tuple[LpRow, ...]
    var_bounds: tuple[tuple[float, float], ...]
    var_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.objective) != self.n_vars or len(self.var_bounds) != self.n_vars:
            raise ValueError("objective/bounds length must equal n_vars")
        for lo, hi in self.var_bounds:
            if lo > hi:
                raise ValueError(f"variable bounds crossed: [{lo}, {hi}]")
        for row in self.rows:
            for j, _ in row.coeffs:
                if not 0 <= j < self.n_vars:
                    raise ValueError(f"row coefficient index {j} out of range")


@dataclass(frozen=True)
class LpSolution:
    status: LpStatus
    x: tuple[float, ...] | None = None
    objective_value: float | None = None


class LpBuilder:
    """Incremental assembly of an LpProblem with named variables."""

    def __init__(self) -> None:
        self._bounds: list[tuple[float, float]] = []
        self._costs: list[float] = []
        self._names: list[str] = []
        self._rows: list[LpRow] = []

    @property
    def n_vars(self) -> int:
        return len(self._bounds)

    @property
    def n_rows(self) -> int:
        return len(self._rows)

    def add_var(self, lb: float = 0.0, ub: float = INF, cost: float = 0.0,
                name: str = "") -> int:
        idx = len(self._bounds)
        self._bounds.append((lb, ub))
        self._costs.append(cost)
        self._names.append(name or f"x{idx}")
        return idx

    def add_cost(self, var: int, cost: float) -> None:
        self._costs[var] += cost

    def add_row(self, coeffs: Sequence[tuple[int, float]], relation: str,
                rhs: float) -> None:
        self._rows.append(LpRow(tuple(coeffs), relation, float(rhs)))

    def problem(self) -> LpProblem:
        return LpProblem(
            n_vars=self.n_vars,
            objective=tuple(self._costs),
            rows=tuple(self._rows),
            var_bounds=tuple(self._bounds),
            var_names=tuple(self._names),
        )


# nonbasic status codes
_BASIC, _AT_LOWER, _AT_UPPER, _FREE = 0, 1, 2, 3

# pivot-loop exit codes
_OPTIMAL, _UNBOUNDED, _MAXITER, _REFRESH = 0, 1, 2, 3
_REFRESH_EVERY = 500  # pivots between tableau recomputations
_DROP_TOL = 1e-12  # skip rank-1 updates on rows with negligible multipliers


@_njit(cache=True)
def _crash_kernel(A, b, lb, ub, row_cols, row_nnz, first_row, status, x,
                  basis, width):
    """Forward-substitution crash over the rows; returns end of artificials."""
    m = A.shape[0]
    art_col = width
    for i in range(m):
        resid = b[i]
        for t in range(row_nnz[i]):
            j = row_cols[i, t]
            resid -= A[i, j] * x[j]
        chosen = -1
        for t in range(row_nnz[i]):
            j = row_cols[i, t]
            if first_row[j] != i or status[j] == _BASIC:
                continue
            if status[j] == _FREE:
                chosen = j
                break
            v = x[j] + resid / A[i, j]
            if chosen < 0 and lb[j] - _FEAS_TOL <= v <= ub[j] + _FEAS_TOL:
                chosen = j
        if chosen >= 0:
            x[chosen] += resid / A[i, chosen]
            status[chosen] = _BASIC
            basis[i] = chosen
        else:
            A[i, art_col] = 1.0 if resid >= 0.0 else -1.0
            x[art_col] = abs(resid)
            status[art_col] = _BASIC
            basis[i] = art_col
            art_col += 1
    return art_col


@_njit(cache=True)
def _initial_tableau(A, basis, T):
    """T = B^-1 A for the lower-triangular crash basis (sparse-aware)."""
    m = A.shape[0]
    ncols = A.shape[1]
    for i in range(m):
        for j in range(ncols):
            T[i, j] = A[i, j]
        for jj in range(i):
            f = A[i, basis[jj]]
            if f != 0.0:
                for j in range(ncols):
                    T[i, j] -= f * T[jj, j]
        dinv = 1.0 / T[i, basis[i]]
        for j in range(ncols):
            T[i, j] *= dinv


@_njit(cache=True)
def _pivot_loop(T, x_basic, x_nb, basis, status, lb, ub, d, counters,
                max_pivots, bland_after):
    """Bounded-variable simplex pivots until optimal/unbounded/limit.

    Mutates all array arguments in place; `counters` is (pivots, degenerate).
    Written as plain loops so numba can compile it; runs uncompiled otherwise.
    """
    m = T.shape[0]
    ncols = T.shape[1]
    done_here = 0
    while True:
        if done_here >= _REFRESH_EVERY:
            return _REFRESH
        # entering variable: Dantzig pricing, Bland's rule after stalling
        bland = counters[1] >= bland_after
        q = -1
        best = _COST_TOL
        direction = 1.0
        for j in range(ncols):
            st = status[j]
            if st == _BASIC:
                continue
            dj = d[j]
            if (st == _AT_LOWER or st == _FREE) and dj < -_COST_TOL:
                v = -dj
                dirj = 1.0
            elif (st == _AT_UPPER or st == _FREE) and dj > _COST_TOL:
                v = dj
                dirj = -1.0
            else:
                continue
            if bland:
                q = j
                direction = dirj
                break
            if v > best:
                best = v
                q = j
                direction = dirj
        if q < 0:
            return _OPTIMAL

        # ratio test: smallest step, ties to the lowest leaving variable index
        t_min = INF
        for i in range(m):
            delta = direction * T[i, q]
            if delta > _PIVOT_TOL:
                if lb[basis[i]] > -INF:
                    t = (x_basic[i] - lb[basis[i]]) / delta
                else:
                    continue
            elif delta < -_PIVOT_TOL:
                if ub[basis[i]] < INF:
                    t = (ub[basis[i]] - x_basic[i]) / (-delta)
                else:
                    continue
            else:
                continue
            if t < 0.0:
                t = 0.0
            if t < t_min:
                t_min = t
        r = -1
        leave_at_upper = False
        if t_min < INF:
            best_var = -1
            for i in range(m):
                delta = direction * T[i, q]
                if delta > _PIVOT_TOL:
                    if lb[basis[i]] <= -INF:
                        continue
                    t = (x_basic[i] - lb[basis[i]]) / delta
                    upper = False
                elif delta < -_PIVOT_TOL:
                    if ub[basis[i]] >= INF:
                        continue
                    t = (ub[basis[i]] - x_basic[i]) / (-delta)
                    upper = True
                else:
                    continue
                if t < 0.0:
                    t = 0.0
                if t <= t_min + _DEGEN_STEP_TOL:
                    if best_var < 0 or basis[i] < best_var:
                        best_var = basis[i]
                        r = i
                        leave_at_upper = upper
            t_best = t_min
        else:
            t_best = INF

        # entering variable's own bound flip
        span = ub[q] - lb[q]
        if span < t_best:
            for i in range(m):
                x_basic[i] -= span * direction * T[i, q]
            if status[q] == _AT_LOWER:
                x_nb[q] = ub[q]
                status[q] = _AT_UPPER
            else:
                x_nb[q] = lb[q]
                status[q] = _AT_LOWER
            counters[0] += 1
            done_here += 1
            if span <= _DEGEN_STEP_TOL:
                counters[1] += 1
            else:
                counters[1] = 0
            if counters[0] > max_pivots:
                return _MAXITER
            continue
        if t_best == INF:
            return _UNBOUNDED

        piv = T[r, q]
        if abs(piv) < _PIVOT_TOL:
            return _REFRESH
        enter_val = x_nb[q] + direction * t_best
        for i in range(m):
            x_basic[i] -= t_best * direction * T[i, q]
        leaving = basis[r]
        if leave_at_upper:
            x_nb[leaving] = ub[leaving]
            status[leaving] = _AT_UPPER
        else:
            x_nb[leaving] = lb[leaving]
            status[leaving] = _AT_LOWER
        status[q] = _BASIC
        basis[r] = q
        x_basic[r] = enter_val

        invp = 1.0 / piv
        for j in range(ncols):
            T[r, j] *= invp
        for i in range(m):
            if i == r:
                continue
            f = T[i, q]
            if abs(f) > _DROP_TOL:  # periodic refresh bounds the drift
                for j in range(ncols):
                    T[i, j] -= f * T[r, j]
            elif f != 0.0:
                T[i, q] = 0.0
        dq = d[q]
        if dq != 0.0:
            for j in range(ncols):
                d[j] -= dq * T[r, j]
        d[q] = 0.0

        counters[0] += 1
        done_here += 1
        if t_best <= _DEGEN_STEP_TOL:
            counters[1] += 1
        else:
            counters[1] = 0
        if counters[0] > max_pivots:
            return _MAXITER


class _Tableau:
    """Dense simplex state over the equality-form problem."""

    def __init__(self, prob: LpProblem):
        m = len(prob.rows)
        n = prob.n_vars
        n_slack = sum(1 for r in prob.rows if r.relation != "=")
        width = n + n_slack
        A = np.zeros((m, width + m))  # reserve columns for artificials
        b = np.zeros(m)
        lb = np.full(width + m, 0.0)
        ub = np.full(width + m, INF)
        lb[:n] = [lo for lo, _ in prob.var_bounds]
        ub[:n] = [hi for _, hi in prob.var_bounds]
        s = n
        row_nz: list[list[int]] = []
        for i, row in enumerate(prob.rows):
            cols = []
            for j, a in row.coeffs:
                A[i, j] += a
            b[i] = row.rhs
            for j, _ in row.coeffs:
                if A[i, j] != 0.0 and j not in cols:
                    cols.append(j)
            if row.relation == "<=":
                A[i, s] = 1.0
                cols.append(s)
                s += 1
            elif row.relation == ">=":
                A[i, s] = -1.0
                cols.append(s)
                s += 1
            row_nz.append(sorted(cols))
        assert s == width
        max_nnz = max((len(c) for c in row_nz), default=1)
        self.row_cols = np.zeros((m, max_nnz), dtype=np.int64)
        self.row_nnz = np.zeros(m, dtype=np.int64)
        for i, cols in enumerate(row_nz):
            self.row_nnz[i] = len(cols)
            self.row_cols[i, :len(cols)] = cols
        self.m = m
        self.n_struct = n
        self.width = width  # structural + slack columns
        self.A = A
        self.b = b
        self.lb = lb
        self.ub = ub
        self.n_art = 0
        self.pivots = 0
        self.degenerate = 0

    # -- crash ------------------------------------------------------------

    def crash(self) -> None:
        """Pick a lower-triangular starting basis by forward substitution.

        Rows are scanned in order; each row gets a basic variable whose first
        occurrence is that row (keeping the basis triangular), preferring one
        whose implied value is within bounds.  Rows with no such candidate get
        an artificial variable.
        """
        m, width = self.m, self.width
        A, b, lb, ub = self.A, self.b, self.lb, self.ub
        status = np.full(A.shape[1], _AT_LOWER, dtype=np.int8)
        x = np.zeros(A.shape[1])
        for j in range(width):
            if lb[j] == -INF and ub[j] == INF:
                status[j] = _FREE
                x[j] = 0.0
            elif lb[j] == -INF:
                status[j] = _AT_UPPER
                x[j] = ub[j]
            elif ub[j] == INF or abs(lb[j]) <= abs(ub[j]):
                status[j] = _AT_LOWER
                x[j] = lb[j]
            else:
                status[j] = _AT_UPPER
                x[j] = ub[j]

        first_row = np.full(A.shape[1], -1, dtype=np.int64)
        for i in range(m):
            for t in range(self.row_nnz[i]):
                j = self.row_cols[i, t]
                if first_row[j] < 0:
                    first_row[j] = i

        basis = np.full(m, -1, dtype=np.int64)
        art_col = _crash_kernel(A, b, lb, ub, self.row_cols, self.row_nnz,
                                first_row, status, x, basis, width)
        self.n_art = art_col - width
        self.total = art_col
        self.A = self.A[:, :art_col]
        self.lb = self.lb[:art_col]
        self.ub = self.ub[:art_col]
        self.basis = basis
        self.status = status[:art_col]
        self.x_nb = x[:art_col]  # nonbasic values; basic entries mirrored in x_basic
        self.x_basic = x[basis] if m else np.zeros(0)
        # B is lower triangular by construction
        self.T = np.zeros((m, art_col))
        if m:
            _initial_tableau(self.A, basis, self.T)

    # -- core pivoting ----------------------------------------------------

    def _refresh(self) -> None:
        """Recompute tableau and basic values from the current basis."""
        if self.m == 0:
            return
        B = self.A[:, self.basis]
        self.T = np.linalg.solve(B, self.A)
        nb_mask = self.status != _BASIC
        rhs = self.b - self.A[:, nb_mask] @ self.x_nb[nb_mask]
        self.x_basic = np.linalg.solve(B, rhs)

    def nonbasic_values(self) -> np.ndarray:
        x = self.x_nb.copy()
        x[self.basis] = self.x_basic
        return x

    def run(self, c: np.ndarray, max_pivots: int, phase: int) -> str:
        """Run simplex to optimality for cost vector c.

        Returns "optimal" or "unbounded".  Raises MaxIterationsExceeded.
        """
        stalls = 0
        while True:
            d = c - (c[self.basis] @ self.T if self.m else 0.0)  # reduced costs
            d[self.basis] = 0.0
            counters = np.array([self.pivots, self.degenerate], dtype=np.int64)
            code = _pivot_loop(self.T, self.x_basic, self.x_nb, self.basis,
                               self.status, self.lb, self.ub, d, counters,
                               max_pivots, _BLAND_AFTER)
            progressed = counters[0] > self.pivots
            self.pivots, self.degenerate = int(counters[0]), int(counters[1])
            if code == _OPTIMAL:
                return "optimal"
            if code == _UNBOUNDED:
                if phase == 1:
                    raise MaxIterationsExceeded(
                        "phase-1 objective unbounded: numerical breakdown")
                return "unbounded"
            if code == _MAXITER:
                raise MaxIterationsExceeded(
                    f"simplex exceeded {max_pivots} pivots")
            # _REFRESH: rebuild the tableau from the basis and continue
            stalls = 0 if progressed else stalls + 1
            if stalls > 2:
                raise MaxIterationsExceeded("pivot element vanished")
            self._refresh()


def solve_lp(problem: LpProblem, max_pivots: int = 10_000) -> LpSolution:
    """Solve a bounded-variable LP; statuses are certified (phase 1 / ray)."""
    tab = _Tableau(problem)
    tab.crash()
    c_full = np.zeros(tab.total)
    c_full[:problem.n_vars] = problem.objective

    if tab.n_art:
        c1 = np.zeros(tab.total)
        c1[tab.width:] = 1.0
        tab.run(c1, max_pivots, phase=1)
        x = tab.nonbasic_values()
        if x[tab.width:] @ c1[tab.width:] > 1e-7:
            return LpSolution(LpStatus.INFEASIBLE)
        # pin artificials at zero for phase 2
        tab.ub[tab.width:] = 0.0
        tab.lb[tab.width:] = 0.0

    outcome = tab.run(c_full, max_pivots, phase=2)
    if outcome == "unbounded":
        return LpSolution(LpStatus.UNBOUNDED)
    x = tab.nonbasic_values()[:problem.n_vars]
    obj = float(np.dot(problem.objective, x))
    return LpSolution(LpStatus.OPTIMAL, tuple(float(v) for v in x), obj)


def feasibility_residual(problem: LpProblem, x: Sequence[float]) -> float:
    """Infinity-norm violation of rows and bounds at x (diagnostic helper)."""
    worst = 0.0
    xv = np.asarray(x, dtype=float)
    for (lo, hi), v in zip(problem.var_bounds, xv):
        if lo > -INF:
            worst = max(worst, lo - v)
        if hi < INF:
            worst = max(worst, v - hi)
    for row in problem.rows:
        lhs = sum(a * xv[j] for j, a in row.coeffs)
        if row.relation == "<=":
            worst = max(worst, lhs - row.rhs)
        elif row.relation == ">=":
            worst = max(worst, row.rhs - lhs)
        else:
            worst = max(worst, abs(lhs - row.rhs))
    return worst


def dump_mps(problem: LpProblem, name: str = "GRIDWEAVE") -> str:
    """Render the problem in fixed-column MPS text for external cross-checks."""
    names = problem.var_names or tuple(f"X{j}" for j in range(problem.n_vars))
    lines = [f"NAME          {name}", "ROWS", " N  COST"]
    tag = {"<=": "L", "=": "E", ">=": "G"}
    for i, row in enumerate(problem.rows):
        lines.append(f" {tag[row.relation]}  R{i:06d}")
    lines.append("COLUMNS")

    def entry(col: str, row: str, val: float) -> str:
        return f"    {col:<10.10}{row:<10.10}{val:> .6E}"

    by_col: dict[int, list[tuple[str, float]]] = {j: [] for j in range(problem.n_vars)}
    for j, c in enumerate(problem.objective):
        if c != 0.0:
            by_col[j].append(("COST", c))
    for i, row in enumerate(problem.rows):
        for j, a in row.coeffs:
            if a != 0.0:
                by_col[j].append((f"R{i:06d}", a))
    for j in range(problem.n_vars):
        for rname, val in by_col[j]:
            lines.append(entry(names[j][:10], rname, val))
    lines.append("RHS")
    for i, row in enumerate(problem.rows):
        if row.rhs != 0.0:
            lines.append(entry("RHS", f"R{i:06d}", row.rhs))
    lines.append("BOUNDS")
    for j, (lo, hi) in enumerate(problem.var_bounds):
        col = names[j][:10]
        if lo == -INF and hi == INF:
            lines.append(f" FR BND       {col}")
            continue
        if lo == -INF:
            lines.append(f" MI BND       {col}")
        elif lo != 0.0:
            lines.append(f" LO BND       {col}  {lo:> .6E}")
        if hi < INF:
            lines.append(f" UP BND       {col}  {hi:> .6E}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"
