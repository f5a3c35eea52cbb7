"""Dense two-phase primal simplex for small linear programs.

Problems are stated as  min c'x  subject to row-wise <= or >= constraints
and x >= 0. Rows are normalized to <= form with slack variables; rows whose
right-hand side is then negative get an artificial variable and a phase-1
feasibility solve precedes the cost minimization.

Pivot selection is Dantzig's rule (most negative reduced cost, lowest
column index on ties) with the leaving row resolved Bland-style (lowest
basic variable index among ratio ties). After a run of degenerate pivots
the entering rule permanently switches to Bland's lowest-index rule, which
guarantees termination; every rule here is deterministic, so the returned
vertex is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DataError

__all__ = ["LpStandardProblem", "LpSolution", "solve_lp"]

_PIVOT_TOL = 1e-9
_RATIO_TIE_TOL = 1e-12
_DEGENERATE_TOL = 1e-12
_BLAND_AFTER = 32
_FEAS_TOL = 1e-7


@dataclass
class LpStandardProblem:
    """min c'x s.t. A x (<=|>=) b, x >= 0; sense[i] is '<=' or '>='."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    sense: tuple

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        m, n = self.A.shape
        if self.c.shape != (n,) or self.b.shape != (m,):
            raise DataError(
                f"inconsistent LP dimensions: A is {m}x{n}, "
                f"c has {self.c.shape}, b has {self.b.shape}"
            )
        if len(self.sense) != m or any(s not in ("<=", ">=") for s in self.sense):
            raise DataError("sense must give '<=' or '>=' per constraint row")
        if not (
            np.all(np.isfinite(self.c))
            and np.all(np.isfinite(self.A))
            and np.all(np.isfinite(self.b))
        ):
            raise DataError("LP data must be finite")


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    status: str  # 'optimal' | 'infeasible' | 'unbounded' | 'iteration_limit'
    n_iterations: int


@njit(cache=True)
def _pivot(T, basis, r, j):
    piv = T[r, j]
    T[r] /= piv
    nrows = T.shape[0]
    for i in range(nrows):
        if i != r:
            f = T[i, j]
            if f != 0.0:
                T[i] -= f * T[r]
                T[i, j] = 0.0
    basis[r] = j


@njit(cache=True)
def _run_simplex(T, basis, price_ncols, rhs_col, max_iter):
    """Iterate to optimality on the tableau (last row reduced costs).

    Only columns below price_ncols may enter (artificials never re-enter
    once driven out). Returns (status, iterations) with status 0 optimal,
    1 unbounded, 2 iteration limit.
    """
    m = T.shape[0] - 1
    degen_run = 0
    bland = False
    for it in range(max_iter):
        # entering column
        enter = -1
        if bland:
            for j in range(price_ncols):
                if T[m, j] < -_PIVOT_TOL:
                    enter = j
                    break
        else:
            best = -_PIVOT_TOL
            for j in range(price_ncols):
                v = T[m, j]
                if v < best:
                    best = v
                    enter = j
        if enter < 0:
            return 0, it
        # leaving row: min ratio, ties by lowest basic variable index
        best_ratio = np.inf
        leave = -1
        leave_var = 1 << 60
        for i in range(m):
            a = T[i, enter]
            if a > _PIVOT_TOL:
                ratio = T[i, rhs_col] / a
                if ratio < best_ratio - _RATIO_TIE_TOL:
                    best_ratio = ratio
                    leave = i
                    leave_var = basis[i]
                elif ratio < best_ratio + _RATIO_TIE_TOL and basis[i] < leave_var:
                    leave = i
                    leave_var = basis[i]
        if leave < 0:
            return 1, it
        if best_ratio < _DEGENERATE_TOL:
            degen_run += 1
            if degen_run >= _BLAND_AFTER:
                bland = True
        else:
            degen_run = 0
        _pivot(T, basis, leave, enter)
    return 2, max_iter


def solve_lp(problem: LpStandardProblem, max_iter: int | None = None) -> LpSolution:
    """Solve the LP; never silently wrong: non-optimal statuses are explicit."""
    c = problem.c
    m, n = problem.A.shape
    sense_flip = np.array([-1.0 if s == ">=" else 1.0 for s in problem.sense])
    A = problem.A * sense_flip[:, None]
    b = problem.b * sense_flip
    # slack columns make every row an equality; rows with negative rhs are
    # negated and given an artificial variable
    neg = b < 0.0
    n_art = int(np.count_nonzero(neg))
    n_slack_cols = n + m
    rhs_col = n_slack_cols + n_art
    T = np.zeros((m + 1, rhs_col + 1))
    row_flip = np.where(neg, -1.0, 1.0)
    T[:m, :n] = A * row_flip[:, None]
    rows = np.arange(m)
    T[rows, n + rows] = row_flip
    T[:m, rhs_col] = b * row_flip
    basis = np.empty(m, dtype=np.int64)
    basis[:] = n + rows
    if n_art:
        art_rows = np.flatnonzero(neg)
        art_cols = n_slack_cols + np.arange(n_art)
        T[art_rows, art_cols] = 1.0
        basis[art_rows] = art_cols
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000
    total_iter = 0

    if n_art:
        # phase 1: minimize the sum of artificials
        for i in np.flatnonzero(neg):
            T[m] -= T[i]
        T[m, n_slack_cols:rhs_col] = 0.0
        status, it = _run_simplex(T, basis, n_slack_cols, rhs_col, max_iter)
        total_iter += it
        if status == 2:
            return LpSolution(np.full(n, np.nan), np.nan, "iteration_limit", total_iter)
        phase1_obj = -T[m, rhs_col]
        if status == 1 or phase1_obj > _FEAS_TOL:
            return LpSolution(np.full(n, np.nan), np.nan, "infeasible", total_iter)
        # drive any remaining artificials out of the basis
        redundant = []
        for i in range(m):
            if basis[i] >= n_slack_cols:
                pivot_col = -1
                for j in range(n_slack_cols):
                    if abs(T[i, j]) > _PIVOT_TOL:
                        pivot_col = j
                        break
                if pivot_col >= 0:
                    _pivot(T, basis, i, pivot_col)
                else:
                    redundant.append(i)
        if redundant:
            keep = np.setdiff1d(np.arange(m), np.array(redundant))
            T = np.ascontiguousarray(np.vstack([T[keep], T[-1:]]))
            basis = np.ascontiguousarray(basis[keep])
            m = len(keep)

    # phase 2 reduced-cost row
    T[m] = 0.0
    T[m, :n] = c
    for i in range(m):
        if basis[i] < n:
            cb = c[basis[i]]
            if cb != 0.0:
                T[m] -= cb * T[i]
    status, it = _run_simplex(T, basis, n_slack_cols, rhs_col, max_iter)
    total_iter += it
    if status == 2:
        return LpSolution(np.full(n, np.nan), np.nan, "iteration_limit", total_iter)
    if status == 1:
        return LpSolution(np.full(n, np.nan), -np.inf, "unbounded", total_iter)
    x = np.zeros(n)
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = T[i, rhs_col]
    np.clip(x, 0.0, None, out=x)
    return LpSolution(x=x, objective=float(c @ x), status="optimal", n_iterations=total_iter)
