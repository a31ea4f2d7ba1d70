"""Dense two-phase bounded-variable simplex with Bland's anti-cycling rule.

Problems are stated as

    minimize (or maximize)  c @ x
    subject to              A[r] @ x  (<=, =, >=)  b[r]
                            lower <= x <= upper

where bounds may be infinite. Internally every variable is shifted (and, if
needed, mirrored or split) onto a box [0, cap], each inequality gets a slack
column, and rows with negative right-hand sides are negated so phase one can
start from slacks and artificials.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .config import LP_BOX_TOL, LP_ROW_TOL, PIVOT_TOL, STABLE_PIVOT_TOL
from .errors import NumericalBreakdown

_SENSES = ("<=", "=", ">=")
_OPT_TOL = 1e-10
_TIE_TOL = 1e-12
_REFACTOR_EVERY = 50
_SUSPECT_PIVOT = 1e-6
_HARRIS_TOL = 1e-9


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LpProblem:
    c: np.ndarray
    A: np.ndarray
    senses: tuple
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    maximize: bool = False

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        n = c.size
        A = np.asarray(self.A, dtype=float).reshape(-1, n)
        b = np.asarray(self.b, dtype=float).ravel()
        senses = tuple(self.senses)
        lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        if A.shape[0] != b.size or len(senses) != b.size:
            raise ValueError("rows, senses and right-hand sides differ in length")
        bad = [s for s in senses if s not in _SENSES]
        if bad:
            raise ValueError(f"unknown sense {bad[0]!r}")
        for arr in (c, A, b):
            if not np.all(np.isfinite(arr)):
                raise ValueError("problem data must be finite")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("bounds must not be NaN")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "senses", senses)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)


@dataclass(frozen=True)
class LpSolution:
    status: Status
    x: Optional[np.ndarray] = None
    value: Optional[float] = None
    iterations: int = 0
    duals: Optional[np.ndarray] = field(default=None, repr=False)
    """Row multipliers y of the minimization form (c or -c for maximize).

    Reduced costs are c_min - A.T @ y; together with the box bounds they
    give a dual certificate whose value matches the primal optimum.
    """


class _Standardized:
    """Maps the user problem onto equality rows over boxes [0, cap]."""

    def __init__(self, p: LpProblem):
        n = p.c.size
        self.n = n
        cols, caps, shift = [], [], np.zeros(n)
        self.trivially_infeasible = False
        for j in range(n):
            lo, hi = p.lower[j], p.upper[j]
            if lo > hi + LP_BOX_TOL or lo == np.inf or hi == -np.inf:
                self.trivially_infeasible = True
            if np.isfinite(lo):
                shift[j] = lo
                cols.append((j, 1.0))
                caps.append(max(hi - lo, 0.0))
            elif np.isfinite(hi):
                shift[j] = hi
                cols.append((j, -1.0))
                caps.append(np.inf)
            else:
                cols.append((j, 1.0))
                caps.append(np.inf)
                cols.append((j, -1.0))
                caps.append(np.inf)
        M = np.zeros((n, len(cols)))
        for k, (j, sgn) in enumerate(cols):
            M[j, k] = sgn
        self.M = M
        self.shift = shift
        c_min = -p.c if p.maximize else p.c
        self.c_min = c_min

        m = p.b.size
        Ay = p.A @ M
        rhs = p.b - p.A @ shift
        n_slack = sum(1 for s in p.senses if s != "=")
        S = np.zeros((m, n_slack))
        k = 0
        slack_of_row = [-1] * m
        for r, s in enumerate(p.senses):
            if s == "<=":
                S[r, k] = 1.0
            elif s == ">=":
                S[r, k] = -1.0
            else:
                continue
            slack_of_row[r] = Ay.shape[1] + k
            k += 1
        A_std = np.hstack([Ay, S])
        # equilibrate rows so pivot tolerances mean the same thing everywhere
        scale = np.abs(A_std).max(axis=1) if m else np.zeros(0)
        scale[scale == 0] = 1.0
        flip = np.where(rhs < 0, -1.0, 1.0) / scale
        self.A = A_std * flip[:, None]
        self.rhs = rhs * flip
        self.flip = flip
        self.slack_of_row = slack_of_row
        self.cost = np.concatenate([M.T @ c_min, np.zeros(n_slack)])
        self.caps = np.concatenate([np.array(caps, dtype=float), np.full(n_slack, np.inf)])

    def recover(self, z: np.ndarray) -> np.ndarray:
        return self.shift + self.M @ z[: self.M.shape[1]]


class _Tableau:
    """Dense tableau with per-variable box [0, cap] and Bland pivoting."""

    def __init__(self, A, rhs, caps, basis, careful: bool = False):
        self.careful = careful
        self.A0 = A
        self.rhs0 = rhs
        self.caps = caps
        self.basis = np.array(basis, dtype=int)
        self.x = np.zeros(A.shape[1])
        self.at_upper = np.zeros(A.shape[1], dtype=bool)
        self.rows = np.arange(A.shape[0])
        self.iterations = 0
        self._since_refactor = 0
        self.refactor()

    def refactor(self):
        A = self.A0[self.rows]
        B = A[:, self.basis]
        nonbasic = np.ones(A.shape[1], dtype=bool)
        nonbasic[self.basis] = False
        self.x[~nonbasic] = 0.0
        resid = self.rhs0[self.rows] - A[:, nonbasic] @ self.x[nonbasic]
        try:
            self.T = np.linalg.solve(B, A)
            self.x[self.basis] = np.linalg.solve(B, resid)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown(f"basis matrix became singular: {exc}") from exc
        self._since_refactor = 0

    def pivot(self, r: int, j: int):
        T = self.T
        piv = T[r, j]
        T[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.basis[r] = j
        self._since_refactor += 1
        if self.careful or self._since_refactor >= _REFACTOR_EVERY:
            self.refactor()

    def _harris_row(self, delta, xb, capb, cut):
        """Two-pass ratio test: bound the step with every basic variable
        allowed _HARRIS_TOL of slack, then take the largest pivot among the
        rows that reach that bound (smallest basis index on ties)."""
        slack_ratio = np.full(delta.size, np.inf)
        exact = np.full(delta.size, np.inf)
        dec = delta > cut
        inc = (delta < -cut) & np.isfinite(capb)
        slack_ratio[dec] = (np.maximum(xb[dec], 0.0) + _HARRIS_TOL) / delta[dec]
        slack_ratio[inc] = (np.maximum(capb[inc] - xb[inc], 0.0) + _HARRIS_TOL) / (-delta[inc])
        exact[dec] = np.maximum(xb[dec], 0.0) / delta[dec]
        exact[inc] = np.maximum(capb[inc] - xb[inc], 0.0) / (-delta[inc])
        bound = slack_ratio.min()
        cand = np.flatnonzero(exact <= bound)
        mag = np.abs(delta[cand])
        top = cand[mag >= mag.max() * (1.0 - 1e-12)]
        r = int(top[np.argmin(self.basis[top])])
        return r, float(exact[r])

    def run(self, cost: np.ndarray, active: np.ndarray, max_iter: int) -> Status:
        """Minimize cost @ x over the active columns from the current basis."""
        while True:
            if self.iterations >= max_iter:
                raise NumericalBreakdown(f"no convergence after {max_iter} pivots")
            is_basic = np.zeros(self.T.shape[1], dtype=bool)
            is_basic[self.basis] = True
            d = cost - cost[self.basis] @ self.T
            cand = active & ~is_basic & (
                (~self.at_upper & (d < -_OPT_TOL)) | (self.at_upper & (d > _OPT_TOL))
            )
            idx = np.flatnonzero(cand)
            if idx.size == 0:
                return Status.OPTIMAL
            j = int(idx[0])
            s = -1.0 if self.at_upper[j] else 1.0
            delta = s * self.T[:, j]
            xb = self.x[self.basis]
            capb = self.caps[self.basis]
            col_max = max(1.0, float(np.abs(delta).max(initial=0.0)))
            tol = PIVOT_TOL * col_max
            # Entries below the stable threshold are usually elimination
            # noise; they limit the step only when nothing else does.
            for cut in (STABLE_PIVOT_TOL * col_max, tol):
                ratios = np.full(delta.size, np.inf)
                dec = delta > cut
                ratios[dec] = np.maximum(xb[dec], 0.0) / delta[dec]
                inc = (delta < -cut) & np.isfinite(capb)
                ratios[inc] = np.maximum(capb[inc] - xb[inc], 0.0) / (-delta[inc])
                t_row = ratios.min() if ratios.size else np.inf
                if np.isfinite(t_row):
                    break
            t_flip = self.caps[j]
            self.iterations += 1
            if not np.isfinite(t_row) and not np.isfinite(t_flip):
                tiny = (np.abs(delta) > 0) & (np.abs(delta) <= tol)
                if np.any(tiny):
                    raise NumericalBreakdown(
                        f"column {j} has only pivots below {PIVOT_TOL:g}"
                    )
                return Status.UNBOUNDED
            if t_flip <= t_row:
                self.x[self.basis] = xb - t_flip * delta
                self.x[j] = t_flip if s > 0 else 0.0
                self.at_upper[j] = s > 0
                continue
            if self.careful and np.isfinite(t_row) and t_row < t_flip:
                r, t_row = self._harris_row(delta, xb, capb, cut)
            else:
                ties = np.flatnonzero(ratios <= t_row + _TIE_TOL * (1.0 + t_row))
                r = int(ties[np.argmin(self.basis[ties])])
            if abs(delta[r]) < _SUSPECT_PIVOT * col_max and self._since_refactor:
                # a small pivot may be drift in the updated tableau; decide
                # again from a fresh factorization
                self.iterations -= 1
                self.refactor()
                continue
            leaving = self.basis[r]
            goes_up = delta[r] < 0
            self.x[self.basis] = xb - t_row * delta
            self.x[j] = self.x[j] + s * t_row
            self.x[leaving] = self.caps[leaving] if goes_up else 0.0
            self.at_upper[leaving] = goes_up
            self.at_upper[j] = False
            self.pivot(r, j)


def _phase_one(std: _Standardized, careful: bool = False):
    m, n_std = std.A.shape
    basis, art_rows = [], []
    for r in range(m):
        k = std.slack_of_row[r]
        if k >= 0 and std.A[r, k] > 0:
            basis.append(k)
        else:
            art_rows.append(r)
            basis.append(-1)
    n_art = len(art_rows)
    A = np.hstack([std.A, np.zeros((m, n_art))])
    for a, r in enumerate(art_rows):
        A[r, n_std + a] = 1.0
        basis[r] = n_std + a
    caps = np.concatenate([std.caps, np.full(n_art, np.inf)])
    tab = _Tableau(A, std.rhs, caps, basis, careful)
    max_iter = 50 * (m + A.shape[1]) + 100
    cost = np.zeros(A.shape[1])
    cost[n_std:] = 1.0
    tab.run(cost, np.ones(A.shape[1], dtype=bool), max_iter)
    infeas = tab.x[n_std:].sum()
    scale = 1.0 + (np.abs(std.rhs).max() if m else 0.0)
    if infeas > 1e-9 * scale:
        return None, max_iter
    # Drive zero-valued artificials out of the basis; drop redundant rows.
    r = 0
    while r < tab.basis.size:
        if tab.basis[r] < n_std:
            r += 1
            continue
        row = np.abs(tab.T[r, :n_std])
        is_basic = np.zeros(A.shape[1], dtype=bool)
        is_basic[tab.basis] = True
        row[is_basic[:n_std]] = 0.0
        j = int(np.argmax(row)) if row.size else -1
        if j >= 0 and row[j] > 1e-9:
            tab.x[tab.basis[r]] = 0.0
            tab.pivot(r, j)
            r += 1
        else:
            keep = np.ones(tab.basis.size, dtype=bool)
            keep[r] = False
            tab.x[tab.basis[r]] = 0.0
            tab.rows = tab.rows[keep]
            tab.basis = tab.basis[keep]
            tab.T = tab.T[keep]
    tab.A0 = A[:, :n_std]
    tab.caps = std.caps
    tab.x = tab.x[:n_std]
    tab.at_upper = tab.at_upper[:n_std]
    tab.refactor()
    return tab, max_iter


def _check(p: LpProblem, x: np.ndarray):
    lhs = p.A @ x
    scale = 1.0 + np.abs(p.b)
    for r, s in enumerate(p.senses):
        if s == "<=":
            viol = lhs[r] - p.b[r]
        elif s == ">=":
            viol = p.b[r] - lhs[r]
        else:
            viol = abs(lhs[r] - p.b[r])
        if viol > LP_ROW_TOL * scale[r]:
            raise NumericalBreakdown(f"row {r} violated by {viol:.3e} at the final basis")


def _solve_once(p: LpProblem, std: _Standardized, careful: bool) -> LpSolution:
    tab, max_iter = _phase_one(std, careful)
    if tab is None:
        return LpSolution(Status.INFEASIBLE)
    active = np.ones(std.A.shape[1], dtype=bool)
    status = tab.run(std.cost, active, tab.iterations + max_iter)
    if status is Status.UNBOUNDED:
        return LpSolution(Status.UNBOUNDED, iterations=tab.iterations)
    tab.refactor()
    z = np.clip(tab.x, 0.0, std.caps)
    x = std.recover(z)
    x = np.clip(x, p.lower, p.upper)
    _check(p, x)
    B = std.A[tab.rows][:, tab.basis]
    y = np.zeros(p.b.size)
    try:
        y[tab.rows] = np.linalg.solve(B.T, std.cost[tab.basis]) * std.flip[tab.rows]
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdown(f"final basis singular: {exc}") from exc
    return LpSolution(Status.OPTIMAL, x, float(p.c @ x), tab.iterations, y)


def solve(p: LpProblem) -> LpSolution:
    """Solve ``p`` to a vertex optimum; deterministic for identical input.

    The first attempt uses Bland's rule for both the entering and the leaving
    variable. If that run breaks down numerically, the problem is solved
    again with a fresh factorization after every pivot and a two-pass
    (Harris) choice of the leaving row, which avoids tiny pivots; Bland's
    rule still picks the entering column.
    """
    std = _Standardized(p)
    if std.trivially_infeasible:
        return LpSolution(Status.INFEASIBLE)
    try:
        return _solve_once(p, std, careful=False)
    except NumericalBreakdown:
        return _solve_once(p, std, careful=True)


def feasible_point(
    rows,
    senses: Sequence[str],
    rhs,
    lower,
    upper,
) -> Optional[np.ndarray]:
    """Phase one only: any point satisfying the rows and boxes, or None."""
    rows = np.asarray(rows, dtype=float)
    n = rows.shape[1] if rows.ndim == 2 else np.asarray(lower, dtype=float).size
    p = LpProblem(np.zeros(n), rows.reshape(-1, n),
                  tuple(senses), rhs, lower, upper)
    std = _Standardized(p)
    if std.trivially_infeasible:
        return None
    for careful in (False, True):
        try:
            tab, _ = _phase_one(std, careful)
            if tab is None:
                return None
            x = std.recover(np.clip(tab.x, 0.0, std.caps))
            x = np.clip(x, p.lower, p.upper)
            _check(p, x)
            return x
        except NumericalBreakdown:
            if careful:
                raise
    return None
