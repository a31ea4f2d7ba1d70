"""Difference-of-convex pieces of the knockoff objective and their linearizations.

The decision vector gamma is laid out as (psi_k, theta, psi, omega), each of
length d, where psi_k stands in for 1/psi. With (a, b, c) = (psi_k_i,
theta_i, omega_i) the trilinear term a*b*c equals C1 - C2 for the two convex
polynomials below, and psi_k_i * psi_i equals D1 - D2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DomainError
from .model import PhiVector


def split_gamma(g):
    """Views (psi_k, theta, psi, omega) of a 4d vector."""
    g = np.asarray(g, dtype=float)
    d = g.shape[-1] // 4
    return g[..., :d], g[..., d:2 * d], g[..., 2 * d:3 * d], g[..., 3 * d:]


def make_gamma(phi: PhiVector) -> np.ndarray:
    """Lift phi to gamma with psi_k = 1/psi."""
    return np.concatenate([1.0 / phi.psi, phi.theta, phi.psi, phi.omega])


def eval_sos(phi: PhiVector, psi_min: float = 0.0) -> float:
    """sum_i theta_i * omega_i / psi_i."""
    if np.any(phi.psi < psi_min) or np.any(phi.psi <= 0):
        raise DomainError(f"psi {phi.psi} below psi_min {psi_min}")
    return float(np.sum(phi.theta * phi.omega / phi.psi))


def c_values(g):
    """(C1, C2) summed over the last axis; works on stacks of gamma vectors."""
    a, b, _, c = split_gamma(g)
    c1 = (a + b + c) ** 3 / 6 + (a**4 + b**4 + c**4) / 2 + (a**2 + b**2 + c**2) / 2
    c2 = ((a**3 + b**3 + c**3) / 6
          + ((a * a + b) ** 2 + (b * b + c) ** 2 + (c * c + a) ** 2) / 4
          + ((a + b * b) ** 2 + (b + c * c) ** 2 + (c + a * a) ** 2) / 4)
    return c1.sum(axis=-1), c2.sum(axis=-1)


def eval_c(g):
    c1, c2 = c_values(g)
    return float(c1), float(c2)


def eval_c1(g) -> float:
    return eval_c(g)[0]


def eval_c2(g) -> float:
    return eval_c(g)[1]


def eval_d(g, i: int):
    a, _, p, _ = split_gamma(g)
    return 0.5 * (a[i] + p[i]) ** 2, 0.5 * (a[i] ** 2 + p[i] ** 2)


def trilinear(g) -> float:
    a, b, _, c = split_gamma(g)
    return float(np.sum(a * b * c))


def _assemble(ga, gb, gc, d):
    out = np.zeros(4 * d)
    out[:d], out[d:2 * d], out[3 * d:] = ga, gb, gc
    return out


def grad_c1(g) -> np.ndarray:
    a, b, _, c = split_gamma(g)
    s = (a + b + c) ** 2 / 2
    return _assemble(s + 2 * a**3 + a, s + 2 * b**3 + b, s + 2 * c**3 + c, a.size)


def grad_c2(g) -> np.ndarray:
    a, b, _, c = split_gamma(g)

    def one(x, y, z):
        return 2 * x**3 + x**2 / 2 + x * (y + z) + x + (y**2 + z**2) / 2

    return _assemble(one(a, b, c), one(b, c, a), one(c, a, b), a.size)


def grad_d(g, i: int):
    """Gradients of (D1, D2) for index i."""
    a, _, p, _ = split_gamma(g)
    d = a.size
    g1 = np.zeros(4 * d)
    g1[i] = g1[2 * d + i] = a[i] + p[i]
    g2 = np.zeros(4 * d)
    g2[i], g2[2 * d + i] = a[i], p[i]
    return g1, g2


def _blocks(g):
    a, b, _, c = split_gamma(g)
    d = a.size
    idx = [np.arange(d), d + np.arange(d), 3 * d + np.arange(d)]
    return a, b, c, d, idx


def hess_c1(g) -> np.ndarray:
    a, b, c, d, idx = _blocks(g)
    H = np.zeros((4 * d, 4 * d))
    vals = (a, b, c)
    for i in range(d):
        s = a[i] + b[i] + c[i]
        for p in range(3):
            for q in range(3):
                H[idx[p][i], idx[q][i]] = s + (6 * vals[p][i] ** 2 + 1 if p == q else 0.0)
    return H


def hess_c2(g) -> np.ndarray:
    a, b, c, d, idx = _blocks(g)
    H = np.zeros((4 * d, 4 * d))
    vals = (a, b, c)
    for i in range(d):
        s = a[i] + b[i] + c[i]
        for p in range(3):
            for q in range(3):
                if p == q:
                    H[idx[p][i], idx[q][i]] = 6 * vals[p][i] ** 2 + s + 1
                else:
                    H[idx[p][i], idx[q][i]] = vals[p][i] + vals[q][i]
    return H


@dataclass(frozen=True)
class AffineFunction:
    coef: np.ndarray
    const: float

    def __call__(self, g) -> Union[float, np.ndarray]:
        return np.asarray(g, dtype=float) @ self.coef + self.const


_VALUE: dict = {
    "C1": (eval_c1, grad_c1),
    "C2": (eval_c2, grad_c2),
}


def component(fn_id: str):
    """(value, gradient) callables for "C1", "C2", "D1(i)" or "D2(i)"."""
    if fn_id in _VALUE:
        return _VALUE[fn_id]
    if fn_id[:3] in ("D1(", "D2(") and fn_id.endswith(")"):
        i = int(fn_id[3:-1])
        k = 0 if fn_id[1] == "1" else 1
        return (lambda g: eval_d(g, i)[k]), (lambda g: grad_d(g, i)[k])
    raise ValueError(f"unknown component {fn_id!r}")


def tangent(fn_id: str, anchor) -> AffineFunction:
    """Supporting hyperplane F(g0) + grad F(g0) @ (g - g0)."""
    f, grad = component(fn_id)
    g0 = np.asarray(anchor, dtype=float)
    G = grad(g0)
    return AffineFunction(G, float(f(g0) - G @ g0))


def secant(fn_id: str, simplex) -> AffineFunction:
    """The affine interpolant of F at the simplex vertices."""
    f, _ = component(fn_id)
    V = simplex.vertices if hasattr(simplex, "vertices") else np.asarray(simplex, dtype=float)
    vals = np.array([f(v) for v in V])
    return interpolant(V, vals)


def interpolant(V: np.ndarray, vals: np.ndarray) -> AffineFunction:
    """Affine h with h(V[j]) = vals[j]; V has n+1 rows in n-space."""
    from .geometry import _lu_solve, vertex_system

    sol = _lu_solve(vertex_system(V).T, np.asarray(vals, dtype=float))
    return AffineFunction(sol[:-1], float(sol[-1]))
