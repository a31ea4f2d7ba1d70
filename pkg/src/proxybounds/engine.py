"""Simplicial branch and bound for bounding sums of ratios over the phi polytope.

Each node is a simplex in gamma-space. Its bound comes from an LP in the
barycentric coordinates lambda of the simplex (gamma = V.T @ lambda): the
objective uses the tangent/secant linearization of the difference-of-convex
split of psi_k*theta*omega, and the knockoff equation psi_k*psi = 1 is relaxed
through the same split of psi_k*psi.

Two relaxations are available. ``"plain"`` is exactly that LP. The default
``"strengthened"`` adds further valid rows on the same variables: McCormick
envelopes of the three pairings of the trilinear term over the cell's
bounding box, and tangent/chord cuts of psi_k = 1/psi. Every added row holds
at every feasible gamma, so the bound stays a certified lower bound; the
extra rows only make it converge within practical iteration budgets.

Problems are expressed as a :class:`Program`: one or more independent blocks,
each a 4d-wide slice (psi_k, theta, psi, omega) with its own constraint system,
weight pi and additive offset. Event-mode bounding is a single block with
weight 1; the average-causal-effect extension stacks one block per treatment
value.
"""

from __future__ import annotations

import csv
import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, List, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.optimize import minimize_scalar

from . import lp
from .config import (DEFAULT_MAX_ITER, FEAS_TOL, GAP_TOL, LOCAL_SEARCH_MIN_GAIN,
                     PRUNE_MARGIN, ROW_COEF_CAP)
from .dc import c_values, grad_c1, grad_c2, hess_c1, hess_c2
from .errors import (EmptyFeasibleRegion, InfeasibleStart, NumericalBreakdown,
                     UnsupportedDimension)
from .geometry import BlockBox, Simplex, bisect, block_box, simplex_from_boxes
from .model import LinearConstraintSystem, PhiVector, ProblemSpec, build_ir_phi

RELAXATIONS = ("strengthened", "plain")
_GROUPINGS = ((1, 2, 0), (0, 1, 2), (0, 2, 1))
"""Pairings (x, y, z) of (psi_k, theta, omega): w = x*y, then t = z*w."""


# -- programs ----------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    ir: LinearConstraintSystem
    offset: float
    weight: float
    psi_min: float
    box: BlockBox


@dataclass(frozen=True)
class Program:
    d: int
    blocks: tuple
    s0: Simplex
    gl: np.ndarray
    gu: np.ndarray

    @property
    def width(self) -> int:
        return 4 * self.d

    @property
    def dim(self) -> int:
        return self.width * len(self.blocks)

    def phi(self, gamma, k: int = 0) -> PhiVector:
        g = np.asarray(gamma)[k * self.width:(k + 1) * self.width]
        return PhiVector.from_flat(g[self.d:])

    def block_value(self, phi: PhiVector, k: int) -> float:
        b = self.blocks[k]
        return b.offset + float(np.sum(phi.theta * phi.omega / phi.psi))

    def objective(self, phis: Sequence[PhiVector]) -> float:
        """sum_k pi_k * (offset_k + sum_i theta_i omega_i / psi_i)."""
        return float(sum(b.weight * self.block_value(p, k)
                         for k, (b, p) in enumerate(zip(self.blocks, phis))))


def program_from_blocks(d: int, parts) -> Program:
    """Build a program from (ir, offset, weight, psi_min) tuples."""
    blocks = []
    for ir, offset, weight, psi_min in parts:
        blocks.append(Block(ir, float(offset), float(weight), float(psi_min),
                            block_box(ir, psi_min)))
    boxes = [b.box for b in blocks]
    s0 = simplex_from_boxes(boxes)
    gl = np.concatenate([b.lower for b in boxes])
    gu = np.concatenate([b.upper for b in boxes])
    return Program(d, tuple(blocks), s0, gl, gu)


def event_program(spec: ProblemSpec, ir: Optional[LinearConstraintSystem] = None) -> Program:
    ir = build_ir_phi(spec) if ir is None else ir
    return program_from_blocks(spec.d, [(ir, spec.f_yx, 1.0, spec.psi_min)])


def _as_program(problem: Union[ProblemSpec, Program]) -> Program:
    return problem if isinstance(problem, Program) else event_program(problem)


def _sense(direction: str) -> float:
    if direction == "lower":
        return 1.0
    if direction == "upper":
        return -1.0
    raise ValueError(f"direction must be 'lower' or 'upper', got {direction!r}")


# -- bounding LP -------------------------------------------------------------

class _Rows:
    """LP rows written against the barycentric weights lambda of an
    M-vertex cell and stored against mu = lambda[1:].

    With lambda_0 = 1 - sum(mu), a row a @ lambda becomes
    a_0 + (a[1:] - a_0) @ mu. Subtracting the shared part once, while the
    rows are built, keeps small cells from producing nearly equal columns.
    """

    def __init__(self, n_mu: int, nvar: int):
        self.n_mu = n_mu
        self.nvar = nvar
        self.rows: List[np.ndarray] = []
        self.rhs: List[float] = []
        self.senses: List[str] = []

    def add_capped(self, lam_coef, sense, rhs, extra=()):
        """Add a row unless a coefficient exceeds ROW_COEF_CAP.

        Used for rows that are valid but redundant with others; leaving one
        out only loosens the relaxation."""
        lam_coef = np.asarray(lam_coef, dtype=float)
        mu = lam_coef[1:] - lam_coef[0] if lam_coef.size else lam_coef
        big = max(float(np.abs(mu).max(initial=0.0)),
                  max((abs(v) for _, v in extra), default=0.0))
        if big <= ROW_COEF_CAP:
            self.add(lam_coef, sense, rhs, extra)

    def add(self, lam_coef, sense, rhs, extra=()):
        lam_coef = np.asarray(lam_coef, dtype=float)
        r = np.zeros(self.nvar)
        if lam_coef.size:
            r[:self.n_mu] = lam_coef[1:] - lam_coef[0]
            rhs = rhs - lam_coef[0]
        for idx, val in extra:
            r[idx] += val
        self.rows.append(r)
        self.rhs.append(float(rhs))
        self.senses.append(sense)

    def add_simplex(self):
        """sum(mu) <= 1, i.e. lambda_0 >= 0."""
        r = np.zeros(self.nvar)
        r[:self.n_mu] = 1.0
        self.rows.append(r)
        self.rhs.append(1.0)
        self.senses.append("<=")


def _corners(xl, xu, yl, yu):
    prods = (xl * yl, xl * yu, xu * yl, xu * yu)
    return min(prods), max(prods)


def relaxation_lp(V: np.ndarray, program: Program, sense: float,
                  relaxation: str = "strengthened"):
    """Assemble the node LP for vertex matrix V; None if the cell misses the
    global box. Returns (LpProblem, constant, M - 1) with the min-form value
    equal to LP value + constant and mu = lambda[1:] in the first M - 1
    variables."""
    if relaxation not in RELAXATIONS:
        raise ValueError(f"relaxation must be one of {RELAXATIONS}")
    M, N = V.shape
    d, W = program.d, program.width
    vmin, vmax = V.min(axis=0), V.max(axis=0)
    lo_c = np.maximum(vmin, program.gl)
    hi_c = np.minimum(vmax, program.gu)
    if np.any(lo_c > hi_c + 1e-12):
        return None
    hi_c = np.maximum(hi_c, lo_c)
    g0 = V.mean(axis=0)
    strong = relaxation == "strengthened"

    weights = [sense * b.weight for b in program.blocks]
    n_mu = M - 1
    nvar = n_mu
    t_idx = {}
    for k, w in enumerate(weights):
        if w != 0:
            t_idx[k] = nvar
            nvar += 1
    aux = {}
    if strong:
        for k in t_idx:
            for i in range(d):
                for g in range(3):
                    aux[(k, i, g)] = nvar
                    nvar += 2
    lower = np.zeros(nvar)
    upper = np.full(nvar, np.inf)
    upper[:n_mu] = 1.0
    lower[n_mu:] = -np.inf
    R = _Rows(n_mu, nvar)
    R.add_simplex()
    # The plain relaxation needs its linearization rows; the strengthened
    # one has McCormick rows to fall back on when they are badly scaled.
    R_opt = R.add_capped if strong else R.add
    constant = 0.0

    for k, blk in enumerate(program.blocks):
        cols = slice(k * W, (k + 1) * W)
        Vk = V[:, cols]
        g0k = g0[cols]
        glk, guk = program.gl[cols], program.gu[cols]
        lok, hik = lo_c[cols], hi_c[cols]
        # phi in IR
        A = blk.ir.A @ Vk[:, d:].T
        for r in range(A.shape[0]):
            R.add(A[r], blk.ir.senses[r], blk.ir.b[r])
        # global coordinate box, only where the cell sticks out
        for j in range(W):
            if vmin[k * W + j] < glk[j] - 1e-15:
                R.add(Vk[:, j], ">=", glk[j])
            if vmax[k * W + j] > guk[j] + 1e-15:
                R.add(Vk[:, j], "<=", guk[j])
        # relaxed knockoff equations psi_k * psi = 1
        for i in range(d):
            a0, p0 = g0k[i], g0k[2 * d + i]
            va, vp = Vk[:, i], Vk[:, 2 * d + i]
            d1_sec = 0.5 * (va + vp) ** 2
            d2_sec = 0.5 * (va * va + vp * vp)
            d1_tan = (a0 + p0) * (va + vp)
            d1_tan_c = -0.5 * (a0 + p0) ** 2
            d2_tan = a0 * va + p0 * vp
            d2_tan_c = -0.5 * (a0 * a0 + p0 * p0)
            R_opt(d1_tan - d2_sec, "<=", 1.0 - d1_tan_c)
            R_opt(d1_sec - d2_tan, ">=", 1.0 + d2_tan_c)
            if strong:
                pl, pu = lok[2 * d + i], hik[2 * d + i]
                for q in (pl, pu, 0.5 * (pl + pu)):
                    R.add(va + vp / (q * q), ">=", 2.0 / q)
                R.add(va + vp / (pl * pu), "<=", 1.0 / pl + 1.0 / pu)
        if k not in t_idx:
            continue
        w = weights[k]
        it = t_idx[k]
        constant += w * blk.offset
        c1v, c2v = c_values(Vk)
        c1_0, c2_0 = c_values(g0k)
        if w > 0:
            G = grad_c1(g0k)
            R_opt(Vk @ G - c2v, "<=", -(c1_0 - G @ g0k), ((it, -1.0),))
        else:
            G = grad_c2(g0k)
            R_opt(-(c1v - Vk @ G), "<=", -c2_0 + G @ g0k, ((it, 1.0),))
        if not strong:
            continue
        idx3 = (lambda i: (i, d + i, 3 * d + i))
        t_lo_sum = np.zeros(3)
        t_hi_sum = np.zeros(3)
        for i in range(d):
            trip = idx3(i)
            for g, (px, py, pz) in enumerate(_GROUPINGS):
                jx, jy, jz = trip[px], trip[py], trip[pz]
                xl, xu, yl, yu, zl, zu = lok[jx], hik[jx], lok[jy], hik[jy], lok[jz], hik[jz]
                X, Y, Z = Vk[:, jx], Vk[:, jy], Vk[:, jz]
                iw = aux[(k, i, g)]
                itt = iw + 1
                wl, wu = _corners(xl, xu, yl, yu)
                tl, tu = _corners(zl, zu, wl, wu)
                lower[iw], upper[iw] = wl, wu
                lower[itt], upper[itt] = tl, tu
                t_lo_sum[g] += tl
                t_hi_sum[g] += tu
                if w > 0:
                    R.add(xl * Y + yl * X, "<=", xl * yl, ((iw, -1.0),))
                    R.add(xu * Y + yu * X, "<=", xu * yu, ((iw, -1.0),))
                    R.add(wl * Z, "<=", zl * wl, ((iw, zl), (itt, -1.0)))
                    R.add(wu * Z, "<=", zu * wu, ((iw, zu), (itt, -1.0)))
                else:
                    R.add(-(xu * Y + yl * X), "<=", -xu * yl, ((iw, 1.0),))
                    R.add(-(xl * Y + yu * X), "<=", -xl * yu, ((iw, 1.0),))
                    R.add(-wl * Z, "<=", -zu * wl, ((iw, -zu), (itt, 1.0)))
                    R.add(-wu * Z, "<=", -zl * wu, ((iw, -zl), (itt, 1.0)))
        for g in range(3):
            sgn = 1.0 if w > 0 else -1.0
            extra = [(aux[(k, i, g)] + 1, sgn) for i in range(d)] + [(it, -sgn)]
            R.add(np.zeros(0), "<=", 0.0, extra)
        if w > 0:
            lower[it] = t_lo_sum.max()
        else:
            upper[it] = t_hi_sum.min()

    c = np.zeros(nvar)
    for k, it in t_idx.items():
        c[it] = weights[k]
    prob = lp.LpProblem(c, np.array(R.rows), tuple(R.senses), np.array(R.rhs), lower, upper)
    return prob, constant, n_mu


def _bound_min(s: Simplex, program: Program, sense: float, relaxation: str):
    """Min-form node bound (sense * objective) and argmin gamma."""
    V = s.vertices
    built = relaxation_lp(V, program, sense, relaxation)
    if built is None:
        return math.inf, None
    prob, constant, n_mu = built
    try:
        sol = lp.solve(prob)
    except NumericalBreakdown as exc:
        raise NumericalBreakdown(f"node {s.id}: {exc}") from exc
    if sol.status is lp.Status.INFEASIBLE:
        return math.inf, None
    if sol.status is lp.Status.UNBOUNDED:
        raise NumericalBreakdown(f"node {s.id}: relaxation reported unbounded")
    mu = sol.x[:n_mu]
    return sol.value + constant, V[0] + (V[1:] - V[0]).T @ mu


def bounding(s: Simplex, problem: Union[ProblemSpec, Program], direction: str = "lower",
             parent_bound: Optional[float] = None, relaxation: str = "strengthened"):
    """Bound of the objective over feasible gamma inside ``s``.

    Lower direction returns a value no larger than the restricted minimum
    (+inf when the cell holds no feasible point); upper mirrors this. The
    parent's bound, if given, is folded in monotonically.
    """
    program = _as_program(problem)
    sense = _sense(direction)
    val, gamma = _bound_min(s, program, sense, relaxation)
    if parent_bound is not None:
        val = max(val, sense * parent_bound)
    return sense * val, gamma


# -- certificate -------------------------------------------------------------

def compute_A(problem: Union[ProblemSpec, Program], s0: Optional[Simplex] = None) -> float:
    """Constant of the a priori error bound, evaluated at the corner of S0's
    bounding box with the largest magnitudes.

    Every term is a polynomial with nonnegative coefficients in |gamma|, so
    this corner dominates the maximum over S0. For several blocks the
    per-block constants are combined with weights |pi_k|.
    """
    program = _as_program(problem)
    s0 = program.s0 if s0 is None else s0
    lo, hi = s0.bbox()
    corner = np.maximum(np.abs(lo), np.abs(hi))
    W, d = program.width, program.d
    total = 0.0
    for k, blk in enumerate(program.blocks):
        u = corner[k * W:(k + 1) * W]
        a, b, c = u[:d], u[d:2 * d], u[3 * d:]
        grad = np.concatenate([b * c, a * c, np.zeros(d), a * b])
        A_k = (2 * (math.sqrt(2) + 1) * math.sqrt(d) / blk.psi_min * np.linalg.norm(grad)
               + np.linalg.norm(hess_c1(u)) + 0.5 * np.linalg.norm(hess_c2(u)))
        total += abs(blk.weight) * A_k
    return float(total)


def longest_chain(history: Sequence[Simplex]) -> int:
    """Bisections along the longest chain of selected nodes in which each
    node descends from the previous one."""
    chain = {}
    best = 0
    for s in history:
        L = chain[s.parent_id] + 1 if s.parent_id in chain else 0
        chain[s.id] = L
        best = max(best, L)
    return best


def error_from_chain(L_n: int, dim: int, A: float, dia0: float):
    """(geometric factor, certified absolute error) for chain length L_n."""
    e = L_n // dim
    return (math.sqrt(3) / 2) ** e, A * 0.75 ** e * dia0 ** 2


def global_error(history: Sequence[Simplex], A: float = 1.0, dia0: float = 1.0,
                 dim: Optional[int] = None):
    """Geometric factor and A-scaled error from the selected-node history."""
    if not history:
        raise ValueError("need at least one selected node")
    dim = history[0].dim if dim is None else dim
    return error_from_chain(longest_chain(history), dim, A, dia0)


# -- local search and pruning -------------------------------------------------

def _sos_flat(z, d):
    return float(np.sum(z[:d] * z[2 * d:] / z[d:2 * d]))


def _mixing_sweep(z, d, f, A_all, b_all, ir, cur):
    """One pass of pairwise column mixing; returns (z, value, improved)."""
    improved = False
    for i in range(d):
        for j in range(i + 1, d):
            D = np.zeros(3 * d)
            for o in (0, d, 2 * d):
                D[o + i] = z[o + j] - z[o + i]
                D[o + j] = z[o + i] - z[o + j]
            if not np.any(D):
                continue
            th, ps, om = z[:d], z[d:2 * d], z[2 * d:]
            key = (th[i] * ps[j] - ps[i] * th[j]) * (om[i] * ps[j] - ps[i] * om[j])
            # z(s) = z + s*D with s = 1 - alpha
            lo_s, hi_s = (0.0, 1.0) if key >= 0 else (-np.inf, 0.0)
            s_best, v_best = _line_search(z, D, f, A_all, b_all, lo_s, hi_s)
            if v_best < cur - LOCAL_SEARCH_MIN_GAIN:
                cand = z + s_best * D
                if ir.contains(cand, FEAS_TOL):
                    z, cur = cand, v_best
                    improved = True
    return z, cur, improved


def _line_search(z, D, f, A_all, b_all, lo_s, hi_s):
    """Minimize f(z + s*D) over the feasible part of [lo_s, hi_s]."""
    slope = A_all @ D
    slack = np.maximum(b_all - A_all @ z, 0.0)
    pos, neg = slope > 1e-15, slope < -1e-15
    if np.any(pos):
        hi_s = min(hi_s, float(np.min(slack[pos] / slope[pos])))
    if np.any(neg):
        lo_s = max(lo_s, float(np.max(slack[neg] / slope[neg])))
    if not (np.isfinite(lo_s) and np.isfinite(hi_s)) or hi_s - lo_s < 1e-15:
        return 0.0, f(z)
    grid = np.linspace(lo_s, hi_s, 33)
    vals = [f(z + s * D) for s in grid]
    b = int(np.argmin(vals))
    s_best, v_best = float(grid[b]), float(vals[b])
    a_s, b_s = grid[max(b - 1, 0)], grid[min(b + 1, grid.size - 1)]
    if b_s > a_s:
        res = minimize_scalar(lambda s: f(z + s * D), bounds=(a_s, b_s),
                              method="bounded", options={"xatol": 1e-12})
        if res.fun < v_best:
            s_best, v_best = float(res.x), float(res.fun)
    return s_best, v_best


def _block_steps(z, d, sign, f, A_all, b_all, ir, cur):
    """Exact LP moves in theta and in omega with the other blocks held fixed,
    then a conditional-gradient line step in psi."""
    improved = False
    th, ps, om = slice(0, d), slice(d, 2 * d), slice(2 * d, 3 * d)
    for free, coef in ((th, lambda v: sign * v[om] / v[ps]),
                       (om, lambda v: sign * v[th] / v[ps]),
                       (ps, lambda v: -sign * v[th] * v[om] / v[ps] ** 2)):
        lower, upper = z.copy(), z.copy()
        lower[free], upper[free] = ir.lower[free], ir.upper[free]
        c = np.zeros(3 * d)
        c[free] = coef(z)
        sol = lp.solve(lp.LpProblem(c, ir.A, ir.senses, ir.b, lower, upper))
        if sol.status is not lp.Status.OPTIMAL:
            continue
        s_best, v_best = _line_search(z, sol.x - z, f, A_all, b_all, 0.0, 1.0)
        if v_best < cur - LOCAL_SEARCH_MIN_GAIN:
            cand = z + s_best * (sol.x - z)
            if ir.contains(cand, FEAS_TOL):
                z, cur = cand, v_best
                improved = True
    return z, cur, improved


def _vertex_exchange(z, d, sign, f, ir, cur):
    """Jump theta (then omega) to each coordinate-extreme vertex of its block,
    answer with the best-response LP in the other block, keep the best pair.

    This escapes the partial optima where the theta and omega LP moves are
    each stationary but the bilinear coupling is not."""
    blocks = (slice(0, d), slice(d, 2 * d), slice(2 * d, 3 * d))
    th, ps, om = blocks
    best_z, best_v = z, cur
    for lead, follow in ((th, om), (om, th)):
        for i in range(d):
            for direction in (1.0, -1.0):
                lower, upper = z.copy(), z.copy()
                lower[lead], upper[lead] = ir.lower[lead], ir.upper[lead]
                c = np.zeros(3 * d)
                c[lead.start + i] = direction
                sol = lp.solve(lp.LpProblem(c, ir.A, ir.senses, ir.b, lower, upper))
                if sol.status is not lp.Status.OPTIMAL:
                    continue
                y = sol.x
                lower, upper = y.copy(), y.copy()
                lower[follow], upper[follow] = ir.lower[follow], ir.upper[follow]
                c = np.zeros(3 * d)
                c[follow] = sign * y[lead] / y[ps]
                sol = lp.solve(lp.LpProblem(c, ir.A, ir.senses, ir.b, lower, upper))
                if sol.status is not lp.Status.OPTIMAL:
                    continue
                v = f(sol.x)
                if v < best_v - LOCAL_SEARCH_MIN_GAIN and ir.contains(sol.x, FEAS_TOL):
                    best_z, best_v = sol.x, v
    return best_z, best_v, best_v < cur


def local_search(start: PhiVector, ir: LinearConstraintSystem, sign: float = 1.0,
                 max_sweeps: int = 50):
    """Improve ``sign * sum theta*omega/psi`` from a feasible start.

    The main move mixes a pair of columns: (theta, psi, omega)_i and _j become
    alpha*col_i + (1-alpha)*col_j and (1-alpha)*col_i + alpha*col_j, which
    keeps every block sum fixed. alpha is searched in (0, 1] when
    (theta_i psi_j - psi_i theta_j)(omega_i psi_j - psi_i omega_j) >= 0 and in
    [1, inf) otherwise, restricted to where all rows and boxes still hold.
    Between mixing passes, theta and omega are re-optimized by LP with the
    other blocks fixed (the objective is linear in each), and psi takes a
    conditional-gradient step. When all of these stall, theta and omega are
    tried at the coordinate-extreme vertices of their blocks, each answered
    by the best response of the other block. Moves are kept only if they gain at least
    1e-12. Returns (sum of ratios at the final point, final point).
    """
    z = start.flat().astype(float)
    d = z.size // 3
    if not ir.contains(z, FEAS_TOL):
        raise InfeasibleStart(f"start violates the constraints by {ir.violation(z):.3e}")
    A_ub, b_ub, _, _ = ir.split()
    A_all = np.vstack([A_ub, np.eye(3 * d), -np.eye(3 * d)])
    b_all = np.concatenate([b_ub, ir.upper, -ir.lower])

    def f(v):
        return sign * _sos_flat(v, d)

    cur = f(z)
    for _ in range(max_sweeps):
        z, cur, mixed = _mixing_sweep(z, d, f, A_all, b_all, ir, cur)
        z, cur, stepped = _block_steps(z, d, sign, f, A_all, b_all, ir, cur)
        if not (mixed or stepped):
            z, cur, jumped = _vertex_exchange(z, d, sign, f, ir, cur)
            if not jumped:
                break
    return _sos_flat(z, d), PhiVector.from_flat(z)


OPEN, SPLIT, PRUNED_INFEASIBLE, PRUNED_BY_INCUMBENT = (
    "open", "split", "pruned-infeasible", "pruned-by-incumbent")


@dataclass
class BnBNode:
    simplex: Simplex
    bound: float
    """Min-form bound: the lower bound itself, or minus the upper bound."""
    gamma: Optional[np.ndarray] = None
    status: str = OPEN

    def key(self):
        return (self.bound, self.simplex.id)


def prune(nodes: Sequence[BnBNode], incumbent: float) -> List[BnBNode]:
    """Mark open nodes that cannot beat the (min-form) incumbent.

    Infinite bounds are always pruned. Returns the nodes left open.
    """
    kept = []
    for node in nodes:
        if node.status != OPEN:
            continue
        if not math.isfinite(node.bound):
            node.status = PRUNED_INFEASIBLE
        elif node.bound > incumbent + PRUNE_MARGIN:
            node.status = PRUNED_BY_INCUMBENT
        else:
            kept.append(node)
    return kept


# -- main loop ---------------------------------------------------------------

TRACE_COLUMNS = ("iter", "selected_node_id", "node_bound", "best_bound", "incumbent",
                 "L_n", "geometric_factor", "certified_error", "open_nodes")


class TraceRow(NamedTuple):
    iter: int
    selected_node_id: int
    node_bound: float
    best_bound: float
    incumbent: float
    L_n: int
    geometric_factor: float
    certified_error: float
    open_nodes: int


@dataclass
class BoundResult:
    direction: str
    bound: float
    geometric_factor: float
    certified_error: float
    iterations: int
    L_n: int
    incumbent: float
    incumbent_point: Optional[tuple]
    """One PhiVector per block at the best feasible point found."""
    trace: List[TraceRow] = field(default_factory=list)
    stop_reason: str = "max_iter"
    A: float = math.nan
    dia0: float = math.nan
    relaxation: str = "strengthened"
    numerical_fallbacks: int = 0
    """Children whose LP broke down and kept their parent's bound."""

    @property
    def optimizer(self) -> Optional[PhiVector]:
        return None if self.incumbent_point is None else self.incumbent_point[0]


class _Incumbent:
    def __init__(self, program: Program, sense: float):
        self.program = program
        self.sense = sense
        self.value = math.inf
        self.point: Optional[tuple] = None

    def offer(self, phis) -> bool:
        """Consider a point given as one PhiVector per block."""
        for k, (blk, phi) in enumerate(zip(self.program.blocks, phis)):
            if np.any(phi.psi <= 0) or not blk.ir.contains(phi.flat(), FEAS_TOL):
                return False
        v = self.sense * self.program.objective(phis)
        if v < self.value:
            self.value, self.point = v, tuple(phis)
            return True
        return False

    def polish(self):
        """Run local search on every block of the current point."""
        if self.point is None:
            return
        out = []
        for k, (blk, phi) in enumerate(zip(self.program.blocks, self.point)):
            w = self.sense * blk.weight
            if w == 0:
                out.append(phi)
                continue
            try:
                _, better = local_search(phi, blk.ir, 1.0 if w > 0 else -1.0)
            except InfeasibleStart:
                better = phi
            out.append(better)
        self.offer(out)

    def offer_gamma(self, gamma) -> bool:
        if gamma is None:
            return False
        phis = [self.program.phi(gamma, k) for k in range(len(self.program.blocks))]
        return self.offer(phis)


def run(problem: Union[ProblemSpec, Program], direction: str = "lower",
        tol_delta: float = 1e-3, max_iter: int = DEFAULT_MAX_ITER, prune_nodes: bool = True,
        relaxation: str = "strengthened", error_mode: str = "scaled",
        threads: int = 1) -> BoundResult:
    """Best-first simplicial branch and bound.

    Each iteration selects the open node with the smallest bound (ties by
    node id), bisects it along its longest edge and bounds both children.
    The returned bound is the running maximum of the selected nodes' bounds,
    expressed in the requested direction. The loop stops once the certified
    error (``error_mode="scaled"``) or the bare geometric factor
    (``"factor"``) is at most ``tol_delta``, or after ``max_iter`` iterations.
    """
    if tol_delta <= 0:
        raise ValueError("tol_delta must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if error_mode not in ("scaled", "factor"):
        raise ValueError("error_mode must be 'scaled' or 'factor'")
    program = _as_program(problem)
    sense = _sense(direction)
    s0 = program.s0
    dim = program.dim
    A = compute_A(program, s0)
    dia0 = s0.diameter

    root_bound, root_gamma = _bound_min(s0, program, sense, relaxation)
    if not math.isfinite(root_bound):
        raise EmptyFeasibleRegion("the relaxation over the initial simplex is infeasible")
    incumbent = _Incumbent(program, sense)
    if incumbent.offer_gamma(root_gamma):
        incumbent.polish()

    root = BnBNode(s0, root_bound, root_gamma)
    heap = [(root.bound, s0.id, root)]
    next_id = 1
    best = -math.inf
    L_n = 0
    factor, err = error_from_chain(0, dim, A, dia0)
    trace: List[TraceRow] = []
    stop = "max_iter"
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    fallbacks = 0

    def child_bound(c):
        # A child lies inside its parent, so the parent's bound is valid for
        # it when its own LP cannot be solved reliably.
        try:
            return _bound_min(c, program, sense, relaxation)
        except NumericalBreakdown:
            return None

    def children_bounds(kids, parent_bound):
        nonlocal fallbacks
        if pool is None:
            out = [child_bound(c) for c in kids]
        else:
            out = list(pool.map(child_bound, kids))
        fallbacks += sum(1 for o in out if o is None)
        return [(parent_bound, None) if o is None else o for o in out]

    try:
        it = 0
        while it < max_iter:
            measure = err if error_mode == "scaled" else factor
            if measure <= tol_delta:
                stop = "tolerance"
                break
            while heap and heap[0][2].status != OPEN:
                heapq.heappop(heap)
            if not heap:
                # every remaining node was pruned above the incumbent
                if math.isfinite(incumbent.value):
                    best = incumbent.value
                    stop = "gap closed"
                else:
                    stop = "exhausted"
                break
            if heap[0][0] >= incumbent.value - GAP_TOL:
                # the smallest open bound meets the incumbent: the gap has closed
                best = min(max(best, heap[0][0]), incumbent.value)
                stop = "gap closed"
                break
            _, _, node = heapq.heappop(heap)
            node.status = SPLIT
            it += 1
            # A valid relaxation never exceeds a feasible value; any excess
            # is round-off once the gap has closed.
            best = min(max(best, node.bound), incumbent.value)
            L_n = max(L_n, node.simplex.depth)
            factor, err = error_from_chain(L_n, dim, A, dia0)

            kids = bisect(node.simplex, first_id=next_id)
            next_id += 2
            improved = False
            for kid, (val, gamma) in zip(kids, children_bounds(kids, node.bound)):
                val = max(val, node.bound)
                child = BnBNode(kid, val, gamma)
                if math.isfinite(val):
                    heapq.heappush(heap, (val, kid.id, child))
                    improved |= incumbent.offer_gamma(gamma)
                else:
                    child.status = PRUNED_INFEASIBLE
            if improved:
                incumbent.polish()
            if prune_nodes and math.isfinite(incumbent.value):
                live = [entry for entry in heap if entry[2].status == OPEN]
                kept = set(id(n) for n in prune([e[2] for e in live], incumbent.value))
                heap = [e for e in live if id(e[2]) in kept]
                heapq.heapify(heap)
            open_count = sum(1 for e in heap if e[2].status == OPEN)
            trace.append(TraceRow(it, node.simplex.id, sense * node.bound, sense * best,
                                  sense * incumbent.value, L_n, factor, err, open_count))
    finally:
        if pool is not None:
            pool.shutdown()

    return BoundResult(
        direction=direction,
        bound=sense * best if math.isfinite(best) else sense * root_bound,
        geometric_factor=factor,
        certified_error=err,
        iterations=len(trace),
        L_n=L_n,
        incumbent=sense * incumbent.value,
        incumbent_point=incumbent.point,
        trace=trace,
        stop_reason=stop,
        A=A,
        dia0=dia0,
        relaxation=relaxation,
        numerical_fallbacks=fallbacks,
    )


def write_trace(rows: Sequence[TraceRow], out: IO, comments: Sequence[str] = ()):
    """CSV with a header row; floats use 17 significant digits.

    ``comments`` are written first as lines starting with '#'.
    """
    for line in comments:
        out.write(f"# {line}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in rows:
        w.writerow([v if isinstance(v, int) else format(v, ".17g") for v in row])


def read_trace(src: IO) -> List[TraceRow]:
    lines = [ln for ln in src if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    out = []
    for rec in reader:
        out.append(TraceRow(*(int(rec[c]) if c in ("iter", "selected_node_id", "L_n", "open_nodes")
                              else float(rec[c]) for c in TRACE_COLUMNS)))
    return out


# -- brute-force oracle --------------------------------------------------------

def _grid(lo, hi, step):
    if hi < lo:
        return np.zeros(0)
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    g = lo + step * np.arange(n)
    if hi - g[-1] > 1e-12:
        g = np.append(g, hi)
    return g


def _feasible_pairs(grid, total, lower, upper, v):
    """Grid values x1 with (x1, total - x1) satisfying lower@x <= v <= upper@x."""
    x1 = grid
    x2 = total - grid
    ok = np.ones(x1.size, dtype=bool)
    for w in range(lower.shape[0]):
        lo = lower[w, 0] * x1 + lower[w, 1] * x2
        hi = upper[w, 0] * x1 + upper[w, 1] * x2
        ok &= (lo <= v[w] + 1e-12) & (hi >= v[w] - 1e-12)
    return x1[ok], x2[ok]


def brute_force(spec: ProblemSpec, grid_step: float = 1e-3, direction: str = "lower"):
    """Exhaustive grid search over (theta_1, psi_1, omega_1) for d = 2.

    Returns (value, PhiVector) of the best grid point, or (+-inf, None) if
    no grid point is feasible.
    """
    if spec.d != 2:
        raise UnsupportedDimension(f"grid oracle needs d = 2, got d = {spec.d}")
    if grid_step < 1e-4:
        raise ValueError("grid_step must be at least 1e-4")
    sense = _sense(direction)
    tb = spec.transition_bounds
    v_t, v_p, v_o = spec.event_vectors()
    f_yx, f_x, f_nx, pm = spec.f_yx, spec.f_x, spec.f_notx, spec.psi_min
    t1, t2 = _feasible_pairs(_grid(0.0, f_yx, grid_step), f_yx, tb.lower, tb.upper, v_t)
    p1, p2 = _feasible_pairs(_grid(pm, f_x - pm, grid_step), f_x, tb.lower, tb.upper, v_p)
    o1, o2 = _feasible_pairs(_grid(0.0, f_nx, grid_step), f_nx, tb.lower, tb.upper, v_o)
    if not (t1.size and p1.size and o1.size):
        return sense * math.inf, None
    best, arg = math.inf, None
    r1 = o1[None, :] / p1[:, None]
    r2 = o2[None, :] / p2[:, None]
    for a, b in zip(t1, t2):
        vals = sense * (a * r1 + b * r2)
        flat = int(np.argmin(vals))
        if vals.flat[flat] < best:
            best = float(vals.flat[flat])
            ip, io = np.unravel_index(flat, vals.shape)
            arg = PhiVector(np.array([a, b]), np.array([p1[ip], p2[ip]]),
                            np.array([o1[io], o2[io]]))
    return f_yx + sense * best, arg


def brute_force_min(spec: ProblemSpec, grid_step: float = 1e-3) -> float:
    return brute_force(spec, grid_step, "lower")[0]
