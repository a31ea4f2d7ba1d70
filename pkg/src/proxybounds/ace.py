"""Bounds on a weighted average causal effect sum_x pi(x) * E(Y_x).

For each treatment value x the interventional mean is written in the same
sum-of-ratios form as the event probability, with theta replaced by outcome
moments: theta_{i|x} = sum_y (y - c) f(y, u_i, X=x), psi_{i|x} = f(u_i, X=x),
omega_{i|x} = f(u_i, X!=x), and

    E(Y_x) = offset_x + sum_i theta_{i|x} omega_{i|x} / psi_{i|x},
    offset_x = c + sum_y (y - c) f(y, X=x).

The shift c is min(y) when some outcome is negative and 0 otherwise, so the
moments stay nonnegative and the proxy bounds keep their usual meaning. One
block per x is stacked into a single program, so one branch and bound run
covers every treatment value at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import engine
from .config import COND_CAP, DEFAULT_MAX_ITER, FEAS_TOL, INGEST_TOL
from .errors import (MissingOutcomeValues, NegativeRecovery, NotInvertible,
                     ValidationError)
from .model import PhiVector, ProblemSpec, ir_from_vectors, sum_of_ratios


@dataclass(frozen=True)
class AceProgram:
    program: engine.Program
    pi: np.ndarray
    systems: tuple
    """One constraint system on (theta, psi, omega) per treatment value."""
    moments: tuple
    """Observed moment vectors sum_y (y - c) f(y, W, X=x), one per x."""
    offsets: np.ndarray
    shift: float


def outcome_shift(y_values: Sequence[float]) -> float:
    low = min(y_values)
    return float(low) if low < 0 else 0.0


def _weights(spec: ProblemSpec, pi) -> np.ndarray:
    if pi is None:
        pi = spec.weights_pi
    if pi is None:
        raise ValidationError("no weights: pass pi or set weights_pi in the problem")
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (spec.n_x,):
        raise ValidationError(f"pi has shape {pi.shape}, expected ({spec.n_x},)")
    if not np.all(np.isfinite(pi)):
        raise ValidationError("pi must be finite")
    return pi


def block_system(spec: ProblemSpec, x: int, shift: float):
    """(constraint system, moment vector, offset, psi_min) for treatment x."""
    if spec.y_values is None:
        raise MissingOutcomeValues("the problem has no y_values")
    p = spec.observed.p
    y = np.asarray(spec.y_values) - shift
    moment = np.einsum("y,yw->w", y, p[:, :, x])
    v_psi = p[:, :, x].sum(axis=0)
    v_omega = p.sum(axis=(0, 2)) - v_psi
    m_tot, f_x = float(moment.sum()), float(v_psi.sum())
    f_nx = float(v_omega.sum())
    # psi_min is validated against the target column only; another column
    # with less mass cannot carry d states of at least psi_min each.
    psi_min = min(spec.psi_min, f_x / spec.d)
    tb = spec.transition_bounds
    ir = ir_from_vectors(tb.lower, tb.upper, (moment, v_psi, v_omega),
                         (m_tot, f_x, f_nx),
                         ((0.0, m_tot), (psi_min, f_x), (0.0, f_nx)))
    return ir, moment, shift + m_tot, psi_min


def build_ace_program(spec: ProblemSpec, pi=None) -> AceProgram:
    """Stack one (psi_k, theta, psi, omega) block per treatment value."""
    if spec.y_values is None:
        raise MissingOutcomeValues("ACE bounds need numeric y_values in the problem")
    pi = _weights(spec, pi)
    shift = outcome_shift(spec.y_values)
    parts, systems, moments, offsets = [], [], [], []
    for x in range(spec.n_x):
        ir, moment, offset, psi_min = block_system(spec, x, shift)
        parts.append((ir, offset, pi[x], psi_min))
        systems.append(ir)
        moments.append(moment)
        offsets.append(offset)
    program = engine.program_from_blocks(spec.d, parts)
    return AceProgram(program, pi, tuple(systems), tuple(moments),
                      np.array(offsets), shift)


def ace_value(ace: AceProgram, phis: Sequence[PhiVector]) -> float:
    return ace.program.objective(phis)


def bound_ace(spec: ProblemSpec, pi=None, direction: str = "lower", tol: float = 1e-3,
              max_iter: int = DEFAULT_MAX_ITER, prune_nodes: bool = True,
              relaxation: str = "strengthened", threads: int = 1) -> engine.BoundResult:
    """Lower or upper bound on sum_x pi(x) E(Y_x).

    Blocks with positive effective weight get under-estimators of their
    trilinear terms and blocks with negative weight get over-estimators, so
    the relaxation stays below the weighted sum in the requested direction.
    """
    ace = build_ace_program(spec, pi)
    return engine.run(ace.program, direction, tol_delta=tol, max_iter=max_iter,
                      prune_nodes=prune_nodes, relaxation=relaxation, threads=threads)


def identify_ace_exact(spec: ProblemSpec, pi=None, cond_cap: float = COND_CAP) -> float:
    """sum_x pi(x) E(Y_x) when P(W|U) is square, exact and invertible."""
    ace = build_ace_program(spec, pi)
    tb = spec.transition_bounds
    if spec.n_w != spec.d:
        raise NotInvertible(f"transition matrix is {spec.n_w}x{spec.d}, not square")
    if np.max(np.abs(tb.upper - tb.lower)) > INGEST_TOL:
        raise NotInvertible("transition matrix is not point-identified (lower != upper)")
    P = tb.lower
    cond = np.linalg.cond(P)
    if not np.isfinite(cond) or cond > cond_cap:
        raise NotInvertible(f"condition number {cond:.3g} above cap {cond_cap:.3g}")
    p = spec.observed.p
    total = 0.0
    for x in range(spec.n_x):
        v_psi = p[:, :, x].sum(axis=0)
        v_omega = p.sum(axis=(0, 2)) - v_psi
        rec = [np.linalg.solve(P, v) for v in (ace.moments[x], v_psi, v_omega)]
        low = min(float(r.min()) for r in rec)
        if low < -FEAS_TOL:
            raise NegativeRecovery(f"recovered value {low:.3g} < 0 for x = {x}")
        phi = PhiVector(*(np.maximum(r, 0.0) for r in rec))
        total += ace.pi[x] * (ace.offsets[x] + sum_of_ratios(phi))
    return float(total)
