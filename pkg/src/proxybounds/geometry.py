"""Simplices in gamma-space: the enclosing simplex, longest-edge bisection,
barycentric coordinates and diameters."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import lp
from .config import SIMPLEX_PIVOT_TOL
from .errors import DegenerateSimplex, EmptyFeasibleRegion
from .model import LinearConstraintSystem, ProblemSpec, build_ir_phi

MEMBERSHIP_TOL = 1e-10
MIN_EDGE = 1e-6
"""Smallest edge of S0, relative to 1 + alpha."""


def vertex_system(V: np.ndarray) -> np.ndarray:
    """Vertices as columns stacked over a row of ones."""
    V = np.asarray(V, dtype=float)
    return np.vstack([V.T, np.ones(V.shape[0])])


def _pairwise_sq(V: np.ndarray) -> np.ndarray:
    diff = V[:, None, :] - V[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass(frozen=True)
class Simplex:
    vertices: np.ndarray
    id: int = 0
    parent_id: Optional[int] = None
    depth: int = 0
    """Number of bisections between S0 and this simplex."""
    diameter: float = field(init=False)
    longest_edge: tuple = field(init=False)

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float)
        V.setflags(write=False)
        object.__setattr__(self, "vertices", V)
        D = _pairwise_sq(V)
        top = D.max()
        # first pair (lexicographic) whose length ties the maximum
        cut = top * (1.0 - 1e-12)
        n = V.shape[0]
        pair = (0, 1) if n > 1 else (0, 0)
        done = False
        for i in range(n):
            for j in range(i + 1, n):
                if D[i, j] >= cut:
                    pair = (i, j)
                    done = True
                    break
            if done:
                break
        object.__setattr__(self, "diameter", float(math.sqrt(top)))
        object.__setattr__(self, "longest_edge", pair)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def barycenter(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def _lu_solve(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

    with warnings.catch_warnings():
        # a singular factor is reported below as DegenerateSimplex
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(M)
    if np.min(np.abs(np.diag(lu))) <= SIMPLEX_PIVOT_TOL:
        raise DegenerateSimplex("vertex system is singular")
    return lu_solve((lu, piv), rhs)


def barycentric(s: Simplex, point) -> np.ndarray:
    """Coordinates lambda with sum(lambda) = 1 and vertices.T @ lambda = point."""
    rhs = np.append(np.asarray(point, dtype=float), 1.0)
    return _lu_solve(vertex_system(s.vertices), rhs)


def contains(s: Simplex, point, tol: float = MEMBERSHIP_TOL) -> bool:
    lam = barycentric(s, point)
    return bool(np.all(lam >= -tol) and abs(lam.sum() - 1.0) <= tol)


def diameter(s: Simplex) -> float:
    return s.diameter


def volume(s: Simplex) -> float:
    V = s.vertices
    n = V.shape[1]
    return abs(float(np.linalg.det(V[1:] - V[0]))) / math.factorial(n)


def bisect(s: Simplex, first_id: Optional[int] = None):
    """Split at the midpoint of the longest edge (lexicographic ties)."""
    i, j = s.longest_edge
    V = s.vertices
    mid = 0.5 * (V[i] + V[j])
    a = V.copy()
    a[i] = mid
    b = V.copy()
    b[j] = mid
    ids = (2 * s.id + 1, 2 * s.id + 2) if first_id is None else (first_id, first_id + 1)
    return (Simplex(a, ids[0], s.id, s.depth + 1),
            Simplex(b, ids[1], s.id, s.depth + 1))


# -- the enclosing simplex ---------------------------------------------------

class BlockBox(NamedTuple):
    lower: np.ndarray
    """Coordinate-wise lower bounds of (psi_k, theta, psi, omega)."""
    upper: np.ndarray
    alpha: float
    """An upper bound on the coordinate sum of any feasible gamma."""


def phi_bounds(ir: LinearConstraintSystem):
    """Coordinate-wise min and max of phi over the constraint system."""
    A = ir.A
    x0 = lp.feasible_point(A, ir.senses, ir.b, ir.lower, ir.upper)
    if x0 is None:
        raise EmptyFeasibleRegion("the linear constraint set on phi is empty")
    n = ir.n_vars
    lo, hi = np.zeros(n), np.zeros(n)
    for j in range(n):
        c = np.zeros(n)
        c[j] = 1.0
        for maximize, out in ((False, lo), (True, hi)):
            sol = lp.solve(lp.LpProblem(c, A, ir.senses, ir.b, ir.lower, ir.upper, maximize))
            if sol.status is not lp.Status.OPTIMAL:
                raise EmptyFeasibleRegion(f"bound LP for coordinate {j} is {sol.status.value}")
            out[j] = sol.value
    return lo, hi


def block_box(ir: LinearConstraintSystem, psi_min: float) -> BlockBox:
    """Box and coordinate-sum bound for one (psi_k, theta, psi, omega) block."""
    lo, hi = phi_bounds(ir)
    d = ir.n_vars // 3
    th_lo, ps_lo, om_lo = lo[:d], lo[d:2 * d], lo[2 * d:]
    th_hi, ps_hi, om_hi = hi[:d], hi[d:2 * d], hi[2 * d:]
    ps_lo = np.maximum(ps_lo, psi_min)
    k_lo = 1.0 / ps_hi
    k_hi = 1.0 / ps_lo
    lower = np.concatenate([k_lo, th_lo, ps_lo, om_lo])
    upper = np.concatenate([k_hi, th_hi, ps_hi, om_hi])
    totals = [float(ir.b[-3 + k]) for k in range(3)]
    p_l, p_u = float(ps_lo.min()), float(ps_hi.max())
    f_x = totals[1]
    alpha = sum(totals) + d * d * (p_l + p_u) ** 2 / (4.0 * f_x * p_l * p_u)
    return BlockBox(lower, upper, alpha)


def simplex_from_boxes(boxes: Sequence[BlockBox]) -> Simplex:
    """Simplex with vertex 0 at the stacked lower corner and vertex i shifted
    along axis i by alpha minus the lower corner's coordinate sum."""
    gl = np.concatenate([b.lower for b in boxes])
    alpha = sum(b.alpha for b in boxes)
    edge = alpha - gl.sum()
    if edge < -MIN_EDGE * (1.0 + abs(alpha)):
        raise DegenerateSimplex(f"alpha {alpha} does not exceed the lower corner sum")
    # A point-identified block can make alpha equal the lower corner sum; a
    # slightly larger simplex still encloses the feasible set.
    edge = max(edge, MIN_EDGE * (1.0 + abs(alpha)))
    n = gl.size
    V = np.tile(gl, (n + 1, 1))
    V[1:] += edge * np.eye(n)
    return Simplex(V, id=0)


def initialize_simplex(spec: ProblemSpec, ir: Optional[LinearConstraintSystem] = None) -> Simplex:
    ir = build_ir_phi(spec) if ir is None else ir
    return simplex_from_boxes([block_box(ir, spec.psi_min)])
