"""Witnesses that a bound is attained: a full joint f(y, w, u, x) and a
transition matrix P(W|U) inside the bounds that reproduce the observed table
and the optimizing phi.

A witness is searched for in the factorized form q[y][w][u][x] =
P[w][u] * r[y][u][x], which makes W independent of (Y, X) given U by
construction. The equations are bilinear in (P, r); with either factor fixed
they are linear, so the search alternates two LPs that minimize the total
violation. Every returned witness has passed :func:`verify_witness`, so a
returned witness certifies tightness, while ``None`` is inconclusive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import lp
from .config import DEFAULT_RESTARTS, FEAS_TOL
from .errors import ShapeMismatch
from .model import PhiVector, ProblemSpec, build_ir_phi

MASS_TOL = 1e-9
EQUATION_TOL = 1e-8
SEARCH_TOL = 1e-7
STAGNATION = 1e-10
MAX_ROUNDS = 200


@dataclass(frozen=True)
class JointWitness:
    q: np.ndarray
    """q[y][w][u][x]; y index 0 is the target event."""
    P: np.ndarray
    """P[w][u], column-stochastic."""

    def to_json(self) -> str:
        return json.dumps({"q": self.q.tolist(), "P": self.P.tolist()})


@dataclass(frozen=True)
class WitnessReport:
    ok: bool
    worst: Dict[str, float]
    """Largest violation per invariant category."""

    def __bool__(self) -> bool:
        return self.ok

    def failed(self):
        return [k for k, v in self.worst.items() if v > _LIMITS[k]]


_LIMITS = {
    "nonnegativity": 0.0,
    "mass": MASS_TOL,
    "stochastic": MASS_TOL,
    "transition bounds": MASS_TOL,
    "independence": EQUATION_TOL,
    "marginal": EQUATION_TOL,
    "compatibility": EQUATION_TOL,
}


def _compat(spec: ProblemSpec, q: np.ndarray):
    """(theta, psi, omega) implied by a joint over (y, u, x) or (y, w, u, x)."""
    r = q.sum(axis=1) if q.ndim == 4 else q
    x = spec.target_x
    theta = r[0, :, x]
    psi = r[:, :, x].sum(axis=0)
    omega = r.sum(axis=(0, 2)) - psi
    return theta, psi, omega


def verify_witness(w: JointWitness, phi: PhiVector, spec: ProblemSpec) -> WitnessReport:
    """Check every witness invariant and report the worst violation of each.

    Independence is checked per outcome value: q[y][w][u][x] must equal
    P[w][u] * sum_w' q[y][w'][u][x] for every y, which implies the weaker
    condition summed over y.
    """
    q = np.asarray(w.q, dtype=float)
    P = np.asarray(w.P, dtype=float)
    n_y = spec.observed.p.shape[0]
    if q.shape != (n_y, spec.n_w, spec.d, spec.n_x):
        raise ShapeMismatch(f"q has shape {q.shape}, expected {(n_y, spec.n_w, spec.d, spec.n_x)}")
    if P.shape != (spec.n_w, spec.d):
        raise ShapeMismatch(f"P has shape {P.shape}, expected {(spec.n_w, spec.d)}")
    tb = spec.transition_bounds
    worst = {
        "nonnegativity": float(max(0.0, -q.min(), -P.min())),
        "mass": abs(float(q.sum()) - 1.0),
        "stochastic": float(np.abs(P.sum(axis=0) - 1.0).max()),
        "transition bounds": float(max(0.0, (tb.lower - P).max(), (P - tb.upper).max())),
    }
    r = q.sum(axis=1)
    worst["independence"] = float(np.abs(q - P[None, :, :, None] * r[:, None, :, :]).max())
    worst["marginal"] = float(np.abs(q.sum(axis=2) - spec.observed.p).max())
    got = _compat(spec, q)
    want = (phi.theta, phi.psi, phi.omega)
    worst["compatibility"] = float(max(np.abs(a - b).max() for a, b in zip(got, want)))
    ok = all(v <= _LIMITS[k] for k, v in worst.items())
    return WitnessReport(ok, worst)


# -- search ------------------------------------------------------------------

def _r_step(P, phi, spec):
    """LP over r >= 0 given P; returns (violation, r)."""
    p = spec.observed.p
    n_y, n_w, n_x = p.shape
    d = spec.d
    n_r = n_y * d * n_x

    def ridx(y, u, x):
        return (y * d + u) * n_x + x

    rows, rhs = [], []
    for y in range(n_y):
        for w in range(n_w):
            for x in range(n_x):
                row = np.zeros(n_r)
                for u in range(d):
                    row[ridx(y, u, x)] = P[w, u]
                rows.append(row)
                rhs.append(p[y, w, x])
    xs = spec.target_x
    for u in range(d):
        row = np.zeros(n_r)
        row[ridx(0, u, xs)] = 1.0
        rows.append(row)
        rhs.append(phi.theta[u])
        row = np.zeros(n_r)
        for y in range(n_y):
            row[ridx(y, u, xs)] = 1.0
        rows.append(row)
        rhs.append(phi.psi[u])
        row = np.zeros(n_r)
        for y in range(n_y):
            for x in range(n_x):
                if x != xs:
                    row[ridx(y, u, x)] = 1.0
        rows.append(row)
        rhs.append(phi.omega[u])
    sol = _slack_lp(np.array(rows), np.array(rhs), np.zeros(n_r), np.full(n_r, np.inf))
    if sol is None:
        return np.inf, None
    viol, z = sol
    return viol, z.reshape(n_y, d, n_x)


def _p_step(r, spec):
    """LP over P inside the bounds given r; returns (violation, P)."""
    p = spec.observed.p
    n_y, n_w, n_x = p.shape
    d = spec.d
    n_p = n_w * d
    rows, rhs = [], []
    for y in range(n_y):
        for w in range(n_w):
            for x in range(n_x):
                row = np.zeros(n_p)
                row[w * d:(w + 1) * d] = r[y, :, x]
                rows.append(row)
                rhs.append(p[y, w, x])
    hard = []
    for u in range(d):
        row = np.zeros(n_p)
        row[u::d] = 1.0
        hard.append(row)
    tb = spec.transition_bounds
    sol = _slack_lp(np.array(rows), np.array(rhs), tb.lower.ravel(), tb.upper.ravel(),
                    np.array(hard), np.ones(d))
    if sol is None:
        return np.inf, None
    viol, z = sol
    return viol, z.reshape(n_w, d)


def _slack_lp(A, b, lower, upper, A_hard=None, b_hard=None):
    """min sum(s+ + s-) subject to A z + s+ - s- = b, A_hard z = b_hard."""
    m, n = A.shape
    big = np.hstack([A, np.eye(m), -np.eye(m)])
    rows, rhs = [big], [b]
    if A_hard is not None:
        rows.append(np.hstack([A_hard, np.zeros((A_hard.shape[0], 2 * m))]))
        rhs.append(b_hard)
    A_all = np.vstack(rows)
    b_all = np.concatenate(rhs)
    c = np.concatenate([np.zeros(n), np.ones(2 * m)])
    lo = np.concatenate([lower, np.zeros(2 * m)])
    hi = np.concatenate([upper, np.full(2 * m, np.inf)])
    sol = lp.solve(lp.LpProblem(c, A_all, ("=",) * A_all.shape[0], b_all, lo, hi))
    if sol.status is not lp.Status.OPTIMAL:
        return None
    return sol.value, sol.x[:n]


def _random_transition(rng: np.random.Generator, spec: ProblemSpec) -> Optional[np.ndarray]:
    """A random column-stochastic P inside the bounds: a random convex
    combination of two LP vertices of the transition polytope."""
    tb = spec.transition_bounds
    d, n_w = spec.d, spec.n_w
    hard = np.zeros((d, n_w * d))
    for u in range(d):
        hard[u, u::d] = 1.0
    pts = []
    for _ in range(2):
        c = rng.normal(size=n_w * d)
        sol = lp.solve(lp.LpProblem(c, hard, ("=",) * d, np.ones(d),
                                    tb.lower.ravel(), tb.upper.ravel()))
        if sol.status is not lp.Status.OPTIMAL:
            return None
        pts.append(sol.x)
    t = rng.uniform()
    return (t * pts[0] + (1 - t) * pts[1]).reshape(n_w, d)


def _search(P, phi, spec):
    """Alternate the two LPs from P until the violation stops improving."""
    best = np.inf
    r = None
    for _ in range(MAX_ROUNDS):
        viol, r_new = _r_step(P, phi, spec)
        if r_new is None:
            return None
        r = r_new
        if viol < SEARCH_TOL:
            return P, r
        viol, P_new = _p_step(r, spec)
        if P_new is None:
            return None
        P = P_new
        if viol < SEARCH_TOL:
            return P, r
        if best - viol < STAGNATION:
            break
        best = viol
    return None


def find_witness(phi: PhiVector, spec: ProblemSpec, restarts: int = DEFAULT_RESTARTS,
                 seed: int = 0) -> Optional[JointWitness]:
    """Search for a verified witness; None if phi is infeasible or no
    restart succeeds."""
    ir = build_ir_phi(spec)
    if not ir.contains(phi.flat(), FEAS_TOL):
        return None
    tb = spec.transition_bounds
    starts = []
    if np.allclose(tb.lower, tb.upper):
        starts.append(lambda rng: np.array(tb.lower))
    for child in np.random.SeedSequence(seed).spawn(restarts):
        starts.append(lambda rng, c=child: _random_transition(np.random.default_rng(c), spec))
    for start in starts[:max(restarts, 1)]:
        P0 = start(None)
        if P0 is None:
            continue
        found = _search(P0, phi, spec)
        if found is None:
            continue
        P, r = found
        q = np.clip(P[None, :, :, None] * r[:, None, :, :], 0.0, None)
        w = JointWitness(q, np.array(P))
        if verify_witness(w, phi, spec):
            return w
    return None
