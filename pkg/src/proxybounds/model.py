"""Problem instances, the linear constraint set on phi, and exact identification.

A problem describes an observed joint f(y, W, X) over a proxy W of a hidden
confounder U with d states, together with elementwise bounds on the
transition matrix P(W|U). The unknown vector phi = (theta, psi, omega) holds
theta_i = f(y, u_i, X=x), psi_i = f(u_i, X=x), omega_i = f(u_i, X!=x), and the
interventional probability is f(y, X=x) + sum_i theta_i * omega_i / psi_i.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, NamedTuple, Optional, Sequence, Union

import numpy as np

from .config import COND_CAP, FEAS_TOL, INGEST_TOL, PSI_MIN_DEFAULT
from .errors import NegativeRecovery, NotInvertible, ParseError, ValidationError


@dataclass(frozen=True)
class ObservedDistribution:
    p: np.ndarray
    """Table p[y][w][x]; in event mode row 0 is the target event."""


@dataclass(frozen=True)
class TransitionBounds:
    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True)
class ProblemSpec:
    d: int
    n_w: int
    n_x: int
    target_x: int
    observed: ObservedDistribution
    transition_bounds: TransitionBounds
    psi_min: float = PSI_MIN_DEFAULT
    y_values: Optional[tuple] = None
    weights_pi: Optional[tuple] = None

    def _column(self, x: int):
        return self.observed.p[:, :, x]

    def event_vectors(self, x: Optional[int] = None):
        """(f(y,W,X=x), f(W,X=x), f(W,X!=x)) for the target event."""
        x = self.target_x if x is None else x
        p = self.observed.p
        v_theta = p[0, :, x].copy()
        v_psi = p[:, :, x].sum(axis=0)
        v_omega = p.sum(axis=0).sum(axis=1) - v_psi
        return v_theta, v_psi, v_omega

    @property
    def f_yx(self) -> float:
        return float(self.observed.p[0, :, self.target_x].sum())

    @property
    def f_x(self) -> float:
        return float(self.observed.p[:, :, self.target_x].sum())

    @property
    def f_notx(self) -> float:
        return float(self.observed.p.sum() - self.f_x)


@dataclass(frozen=True)
class PhiVector:
    theta: np.ndarray
    psi: np.ndarray
    omega: np.ndarray

    @classmethod
    def from_flat(cls, v) -> "PhiVector":
        v = np.asarray(v, dtype=float)
        d = v.size // 3
        return cls(v[:d].copy(), v[d:2 * d].copy(), v[2 * d:].copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.theta, self.psi, self.omega])


@dataclass(frozen=True)
class LinearConstraintSystem:
    """Rows A @ z (sense) b plus a box lower <= z <= upper on every variable."""

    A: np.ndarray
    b: np.ndarray
    senses: tuple
    lower: np.ndarray
    upper: np.ndarray
    labels: tuple = field(default=())

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    def violation(self, z) -> float:
        """Largest violation over all rows and box bounds (0 when feasible)."""
        z = np.asarray(z, dtype=float)
        lhs = self.A @ z
        worst = 0.0
        for r, s in enumerate(self.senses):
            if s == "<=":
                v = lhs[r] - self.b[r]
            elif s == ">=":
                v = self.b[r] - lhs[r]
            else:
                v = abs(lhs[r] - self.b[r])
            worst = max(worst, v)
        worst = max(worst, float(np.max(self.lower - z, initial=0.0)))
        worst = max(worst, float(np.max(z - self.upper, initial=0.0)))
        return worst

    def contains(self, z, tol: float = FEAS_TOL) -> bool:
        return self.violation(z) <= tol

    def split(self):
        """(A_ub, b_ub, A_eq, b_eq) with every inequality written as <=."""
        ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []
        for r, s in enumerate(self.senses):
            if s == "<=":
                ub_rows.append(self.A[r])
                ub_rhs.append(self.b[r])
            elif s == ">=":
                ub_rows.append(-self.A[r])
                ub_rhs.append(-self.b[r])
            else:
                eq_rows.append(self.A[r])
                eq_rhs.append(self.b[r])
        n = self.n_vars
        return (np.array(ub_rows).reshape(-1, n), np.array(ub_rhs),
                np.array(eq_rows).reshape(-1, n), np.array(eq_rhs))


# -- loading -----------------------------------------------------------------

def _array(obj, name, ndim):
    try:
        arr = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{name}: not a numeric array ({exc})") from exc
    if arr.ndim != ndim:
        raise ParseError(f"{name}: expected a {ndim}-dimensional array, got {arr.ndim}")
    return arr


def _int(obj, name):
    if isinstance(obj, bool) or not isinstance(obj, int):
        raise ParseError(f"{name}: expected an integer")
    return obj


def spec_from_dict(raw: dict) -> ProblemSpec:
    """Build and validate a ProblemSpec from the decoded JSON object."""
    if not isinstance(raw, dict):
        raise ParseError("top level must be a JSON object")
    try:
        dims = raw["dims"]
        d = _int(dims["u"], "dims.u")
        n_w = _int(dims["w"], "dims.w")
        n_x = _int(dims["x"], "dims.x")
        target_x = _int(raw["target_x"], "target_x")
        p = _array(raw["observed"]["p"], "observed.p", 3)
        lower = _array(raw["transition_bounds"]["lower"], "transition_bounds.lower", 2)
        upper = _array(raw["transition_bounds"]["upper"], "transition_bounds.upper", 2)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"missing or malformed field: {exc}") from exc
    psi_min = raw.get("psi_min", PSI_MIN_DEFAULT)
    if isinstance(psi_min, bool) or not isinstance(psi_min, (int, float)):
        raise ParseError("psi_min: expected a number")
    y_values = raw.get("y_values")
    if y_values is not None:
        y_values = tuple(float(v) for v in _array(y_values, "y_values", 1))
    weights = raw.get("weights_pi")
    if weights is not None:
        weights = tuple(float(v) for v in _array(weights, "weights_pi", 1))
    return make_spec(p, lower, upper, target_x=target_x, psi_min=float(psi_min),
                     y_values=y_values, weights_pi=weights, dims=(d, n_w, n_x))


def make_spec(p, lower, upper, target_x=0, psi_min=PSI_MIN_DEFAULT, y_values=None,
              weights_pi=None, dims=None) -> ProblemSpec:
    """Construct a ProblemSpec from arrays, checking every invariant."""
    p = np.array(p, dtype=float)
    lower = np.array(lower, dtype=float)
    upper = np.array(upper, dtype=float)
    if dims is None:
        dims = (lower.shape[1], p.shape[1], p.shape[2])
    d, n_w, n_x = dims
    if d < 1 or n_w < 1:
        raise ValidationError(f"need d >= 1 and n_w >= 1, got d={d}, n_w={n_w}")
    if n_x < 2:
        raise ValidationError(f"need n_x >= 2, got {n_x}")
    if not 0 <= target_x < n_x:
        raise ValidationError(f"target_x {target_x} outside [0, {n_x})")
    n_y = 2 if y_values is None else len(y_values)
    if p.shape != (n_y, n_w, n_x):
        raise ValidationError(f"observed.p has shape {p.shape}, expected {(n_y, n_w, n_x)}")
    if not np.all(np.isfinite(p)):
        raise ValidationError("observed.p has non-finite entries")
    neg = np.argwhere(p < 0)
    if neg.size:
        raise ValidationError(f"negative probability at {tuple(int(i) for i in neg[0])}")
    mass = float(p.sum())
    if abs(mass - 1.0) > INGEST_TOL:
        raise ValidationError(f"mass {mass:.12g} ≠ 1")
    for name, m in (("lower", lower), ("upper", upper)):
        if m.shape != (n_w, d):
            raise ValidationError(f"transition_bounds.{name} has shape {m.shape}, expected {(n_w, d)}")
        if not np.all(np.isfinite(m)):
            raise ValidationError(f"transition_bounds.{name} has non-finite entries")
    for (w, u), lo in np.ndenumerate(lower):
        hi = upper[w, u]
        if lo < 0:
            raise ValidationError(f"lower < 0 at ({w},{u})")
        if hi > 1:
            raise ValidationError(f"upper > 1 at ({w},{u})")
        if lo > hi:
            raise ValidationError(f"lower > upper at ({w},{u})")
    for u in range(d):
        if lower[:, u].sum() > 1 + INGEST_TOL or upper[:, u].sum() < 1 - INGEST_TOL:
            raise ValidationError(f"no column-stochastic matrix fits the bounds in column {u}")
    f_x = float(p[:, :, target_x].sum())
    if not 0 < psi_min <= f_x / d + INGEST_TOL:
        raise ValidationError(f"psi_min {psi_min} must lie in (0, f(X=x)/d = {f_x / d:.6g}]")
    if y_values is not None and not all(np.isfinite(y_values)):
        raise ValidationError("y_values must be finite")
    if weights_pi is not None:
        if len(weights_pi) != n_x:
            raise ValidationError(f"weights_pi has {len(weights_pi)} entries, expected {n_x}")
        if not all(np.isfinite(weights_pi)):
            raise ValidationError("weights_pi must be finite")
    for arr in (p, lower, upper):
        arr.setflags(write=False)
    return ProblemSpec(
        d=d, n_w=n_w, n_x=n_x, target_x=target_x,
        observed=ObservedDistribution(p),
        transition_bounds=TransitionBounds(lower, upper),
        psi_min=float(psi_min),
        y_values=None if y_values is None else tuple(float(v) for v in y_values),
        weights_pi=None if weights_pi is None else tuple(float(v) for v in weights_pi),
    )


def load_problem(source: Union[bytes, str, IO]) -> ProblemSpec:
    """Parse the JSON problem format from bytes, text or a binary/text stream."""
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not UTF-8: {exc}") from exc
    try:
        raw = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    return spec_from_dict(raw)


def _fmt(obj) -> str:
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in obj) + "]"
    return format(float(obj), ".17g")


def dump_problem(spec: ProblemSpec) -> str:
    """Serialize to the JSON problem format with 17 significant digits."""
    parts = [
        f'"dims": {{"u": {spec.d}, "w": {spec.n_w}, "x": {spec.n_x}}}',
        f'"target_x": {spec.target_x}',
        f'"observed": {{"p": {_fmt(spec.observed.p)}}}',
        f'"transition_bounds": {{"lower": {_fmt(spec.transition_bounds.lower)}, '
        f'"upper": {_fmt(spec.transition_bounds.upper)}}}',
        f'"psi_min": {_fmt(spec.psi_min)}',
    ]
    if spec.y_values is not None:
        parts.append(f'"y_values": {_fmt(spec.y_values)}')
    if spec.weights_pi is not None:
        parts.append(f'"weights_pi": {_fmt(spec.weights_pi)}')
    return "{\n  " + ",\n  ".join(parts) + "\n}\n"


# -- constraint set ----------------------------------------------------------

def ir_from_vectors(lower, upper, vectors, totals, boxes, names=("theta", "psi", "omega")):
    """Constraint system on (theta, psi, omega) for given observed vectors.

    ``vectors`` are the three observed vectors matched to the blocks, ``totals``
    the three block sums and ``boxes`` the three (lo, hi) box ranges.
    """
    n_w, d = lower.shape
    n = 3 * d
    rows, rhs, senses, labels = [], [], [], []
    for k, (v, name) in enumerate(zip(vectors, names)):
        for w in range(n_w):
            r = np.zeros(n)
            r[k * d:(k + 1) * d] = lower[w]
            rows.append(r)
            rhs.append(v[w])
            senses.append("<=")
            labels.append(f"lower[{w}]·{name} <= v_{name}[{w}]")
            r = np.zeros(n)
            r[k * d:(k + 1) * d] = upper[w]
            rows.append(r)
            rhs.append(v[w])
            senses.append(">=")
            labels.append(f"upper[{w}]·{name} >= v_{name}[{w}]")
    for k, (t, name) in enumerate(zip(totals, names)):
        r = np.zeros(n)
        r[k * d:(k + 1) * d] = 1.0
        rows.append(r)
        rhs.append(t)
        senses.append("=")
        labels.append(f"sum {name} = {t:.6g}")
    lo = np.concatenate([np.full(d, b[0]) for b in boxes])
    hi = np.concatenate([np.full(d, b[1]) for b in boxes])
    return LinearConstraintSystem(np.array(rows), np.array(rhs, dtype=float), tuple(senses),
                                  lo, hi, tuple(labels))


def build_ir_phi(spec: ProblemSpec) -> LinearConstraintSystem:
    """Linear constraints every compatible phi satisfies, over (theta, psi, omega)."""
    tb = spec.transition_bounds
    f_yx, f_x, f_nx = spec.f_yx, spec.f_x, spec.f_notx
    return ir_from_vectors(
        tb.lower, tb.upper, spec.event_vectors(),
        (f_yx, f_x, f_nx),
        ((0.0, f_yx), (spec.psi_min, f_x), (0.0, f_nx)),
    )


def sum_of_ratios(phi: PhiVector) -> float:
    return float(np.sum(phi.theta * phi.omega / phi.psi))


# -- exact identification and simulation ------------------------------------

def identify_exact(spec: ProblemSpec, cond_cap: float = COND_CAP, x: Optional[int] = None):
    """f(y|do(x)) when P(W|U) is known exactly and square; returns (value, phi)."""
    tb = spec.transition_bounds
    if spec.n_w != spec.d:
        raise NotInvertible(f"transition matrix is {spec.n_w}x{spec.d}, not square")
    if np.max(np.abs(tb.upper - tb.lower)) > INGEST_TOL:
        raise NotInvertible("transition matrix is not point-identified (lower != upper)")
    P = tb.lower
    cond = np.linalg.cond(P)
    if not np.isfinite(cond) or cond > cond_cap:
        raise NotInvertible(f"condition number {cond:.3g} above cap {cond_cap:.3g}")
    x = spec.target_x if x is None else x
    vectors = spec.event_vectors(x)
    rec = [np.linalg.solve(P, v) for v in vectors]
    low = min(float(r.min()) for r in rec)
    if low < -FEAS_TOL:
        raise NegativeRecovery(f"recovered probability {low:.3g} < 0")
    rec = [np.maximum(r, 0.0) for r in rec]
    phi = PhiVector(*rec)
    f_yx = float(vectors[0].sum())
    return f_yx + sum_of_ratios(phi), phi


class SimulatedInstance(NamedTuple):
    spec: ProblemSpec
    truth: float
    joint: np.ndarray
    """f(y, u, x) with y in {target, complement}."""
    transition: np.ndarray
    """The column-stochastic P(W|U) used to generate the observed table."""


def simulate_forward(rng: np.random.Generator, dims: Sequence[int], widening: float = 0.0,
                     target_x: int = 0) -> SimulatedInstance:
    """Sample a positive joint f(y,U,X) and P(W|U), then emit the observed table.

    W is generated from U alone, so f(y,w,x) = sum_u P(w|u) f(y,u,x). The
    returned bounds are P widened by ``widening`` and clipped to [0, 1].
    """
    d, n_w, n_x = dims
    joint = rng.dirichlet(np.full(2 * d * n_x, 2.0)).reshape(2, d, n_x)
    mix = rng.uniform(0.3, 0.7)
    P = rng.dirichlet(np.ones(n_w), size=d).T
    if n_w == d:
        P = (1 - mix) * np.eye(d) + mix * P
    p = np.einsum("wu,yux->ywx", P, joint)
    p /= p.sum()
    psi = joint[:, :, target_x].sum(axis=0)
    psi_min = min(PSI_MIN_DEFAULT, 0.5 * float(psi.min()))
    lower = np.clip(P - widening, 0.0, 1.0)
    upper = np.clip(P + widening, 0.0, 1.0)
    spec = make_spec(p, lower, upper, target_x=target_x, psi_min=psi_min,
                     dims=(d, n_w, n_x))
    f_u = joint.sum(axis=(0, 2))
    truth = float(np.sum(joint[0, :, target_x] / psi * f_u))
    return SimulatedInstance(spec, truth, joint, P)
