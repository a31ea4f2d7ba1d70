"""Node bounds, the branch and bound loop, the certificate, local search,
pruning and the grid oracle."""

import io
import math

import numpy as np
import pytest

from proxybounds import PhiVector, brute_force, brute_force_min, build_ir_phi, lp, make_spec, run
from proxybounds.dc import make_gamma
from proxybounds.engine import (BnBNode, PRUNED_BY_INCUMBENT, PRUNED_INFEASIBLE, bounding,
                                compute_A, error_from_chain, event_program, global_error,
                                local_search, longest_chain, prune, read_trace, write_trace)
from proxybounds.errors import EmptyFeasibleRegion, InfeasibleStart, UnsupportedDimension
from proxybounds.geometry import Simplex, bisect, initialize_simplex

from conftest import PHI_OPT_04, eps_spec, load


def incompatible_spec():
    """Point-identified P that no nonnegative phi can reproduce."""
    P = np.array([[0.9, 0.1], [0.1, 0.9]])
    p = np.array([[[0.0, 0.05], [0.3, 0.0]], [[0.2, 0.0], [0.25, 0.2]]])
    p /= p.sum()
    return make_spec(p, P, P, psi_min=1e-3)


# -- node bounds --------------------------------------------------------------

def test_root_bound_underestimates_optimum(spec04):
    s0 = initialize_simplex(spec04)
    value, gamma = bounding(s0, spec04)
    assert value <= 0.2 + 1e-9
    assert gamma is not None and gamma.shape == (8,)


def test_cell_outside_constraints_is_infinite(spec04):
    far = np.full(8, 10.0)
    V = np.vstack([far, far + 0.1 * np.eye(8)])
    value, gamma = bounding(Simplex(V), spec04)
    assert value == math.inf and gamma is None


def test_tiny_cell_at_optimizer_is_nearly_exact(spec04):
    theta, psi, omega = (np.array(v) for v in PHI_OPT_04)
    g = make_gamma(PhiVector(theta, psi, omega))
    h = 1e-4
    V = np.vstack([g - h / 9, g - h / 9 + h * np.eye(8)])
    value, _ = bounding(Simplex(V), spec04)
    assert abs(value - 0.2) <= 1e-3


def test_parent_bound_folded_in(spec04):
    s0 = initialize_simplex(spec04)
    kid = bisect(s0)[0]
    raw, _ = bounding(kid, spec04)
    assert bounding(kid, spec04, parent_bound=raw + 1.0)[0] == raw + 1.0


def test_upper_root_bound_overestimates(spec04):
    s0 = initialize_simplex(spec04)
    up, _ = bounding(s0, spec04, "upper")
    oracle, _ = brute_force(spec04, 1e-2, "upper")
    assert up >= oracle - 1e-9


def test_plain_relaxation_is_also_valid(spec04):
    s0 = initialize_simplex(spec04)
    loose, _ = bounding(s0, spec04, relaxation="plain")
    tight, _ = bounding(s0, spec04)
    assert loose <= tight + 1e-9
    assert loose <= 0.2 + 1e-9


# -- certificate ------------------------------------------------------------------

def test_error_factor_examples():
    d = 2
    assert error_from_chain(0, 4 * d, 1.0, 1.0)[0] == 1.0
    assert error_from_chain(4 * d, 4 * d, 1.0, 1.0)[0] == pytest.approx(math.sqrt(3) / 2)
    assert error_from_chain(8 * d, 4 * d, 1.0, 1.0)[0] == pytest.approx(0.75)
    assert error_from_chain(8 * d, 4 * d, 2.0, 3.0)[1] == pytest.approx(2.0 * 0.75**2 * 9.0)


def test_longest_chain_follows_descendants(spec04):
    s0 = initialize_simplex(spec04)
    a, b = bisect(s0, first_id=1)
    a1, a2 = bisect(a, first_id=3)
    assert longest_chain([s0, b, a, a2]) == 2
    assert longest_chain([s0]) == 0
    factor, err = global_error([s0, a, a1], A=1.0, dia0=1.0, dim=1)
    assert factor == pytest.approx(0.75)


def test_global_error_needs_history():
    with pytest.raises(ValueError):
        global_error([])


def test_A_grows_with_the_box(spec04):
    prog = event_program(spec04)
    s0 = prog.s0
    bigger = Simplex(2.0 * s0.vertices)
    assert compute_A(prog, bigger) > compute_A(prog, s0) > 0


def test_A_at_origin_is_hessian_only(spec04):
    prog = event_program(spec04)
    zero = Simplex(np.vstack([np.zeros(8), 1e-300 * np.eye(8)]))
    from proxybounds.dc import hess_c1, hess_c2

    expected = np.linalg.norm(hess_c1(np.zeros(8))) + 0.5 * np.linalg.norm(hess_c2(np.zeros(8)))
    assert compute_A(prog, zero) == pytest.approx(expected)


# -- local search --------------------------------------------------------------

def _random_feasible(ir, rng):
    verts = []
    for _ in range(6):
        sol = lp.solve(lp.LpProblem(rng.normal(size=ir.n_vars), ir.A, ir.senses, ir.b,
                                    ir.lower, ir.upper))
        verts.append(sol.x)
    return PhiVector.from_flat(rng.dirichlet(np.ones(6)) @ np.array(verts))


@pytest.mark.parametrize("eps", [0.1, 0.3, 0.4])
def test_local_search_from_random_starts(eps):
    spec = eps_spec(eps)
    ir = build_ir_phi(spec)
    rng = np.random.default_rng(int(eps * 10))
    floor = brute_force_min(spec, 1e-3) - spec.f_yx - 2e-3
    for _ in range(5):
        start = _random_feasible(ir, rng)
        value, phi = local_search(start, ir)
        assert ir.contains(phi.flat())
        assert value >= floor
        assert value <= float(np.sum(start.theta * start.omega / start.psi)) + 1e-12
    if eps == 0.4:
        assert spec.f_yx + value <= 0.205


def test_local_search_keeps_stationary_point(spec04):
    theta, psi, omega = (np.array(v) for v in PHI_OPT_04)
    value, phi = local_search(PhiVector(theta, psi, omega), build_ir_phi(spec04))
    assert value == 0.0


def test_local_search_rejects_infeasible_start(spec04):
    bad = PhiVector(np.array([0.2, 0.2]), np.array([0.25, 0.25]), np.array([0.25, 0.25]))
    with pytest.raises(InfeasibleStart):
        local_search(bad, build_ir_phi(spec04))


# -- pruning ---------------------------------------------------------------------

def _nodes(bounds):
    s = Simplex(np.vstack([np.zeros(2), np.eye(2)]))
    return [BnBNode(s, b) for b in bounds]


def test_prune_with_no_incumbent_keeps_finite_nodes():
    nodes = _nodes([0.1, 0.5, math.inf])
    kept = prune(nodes, math.inf)
    assert len(kept) == 2
    assert nodes[2].status == PRUNED_INFEASIBLE


def test_prune_removes_nodes_above_incumbent():
    nodes = _nodes([0.1, 0.2, 0.2 + 1e-6, 0.9])
    kept = prune(nodes, 0.2)
    assert [n.bound for n in kept] == [0.1, 0.2]
    assert nodes[3].status == PRUNED_BY_INCUMBENT


# -- branch and bound ------------------------------------------------------------

def test_short_run_bracketing_and_monotone_trace():
    spec = eps_spec(0.1)
    res = run(spec, "lower", max_iter=120)
    oracle = brute_force_min(spec, 1e-3)
    best = [r.best_bound for r in res.trace]
    assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))
    assert all(r.best_bound <= r.incumbent + 1e-9 for r in res.trace)
    assert max(best) <= oracle + 2e-3
    assert res.bound <= res.incumbent
    assert res.incumbent >= oracle - 2e-3
    assert len(res.trace) == res.iterations == 120


def test_child_bounds_never_below_parent():
    spec = eps_spec(0.2)
    res = run(spec, "lower", max_iter=60)
    node_bounds = [r.node_bound for r in res.trace]
    # best-first selection with monotone children gives nondecreasing picks
    assert all(b2 >= b1 - 1e-12 for b1, b2 in zip(node_bounds, node_bounds[1:]))


def test_gap_closes_at_root_when_relaxation_is_exact(spec04):
    res = run(spec04, "lower")
    assert res.stop_reason == "gap closed"
    assert res.bound == pytest.approx(0.2, abs=1e-9)


def test_no_knowledge_bounds_give_observed_probability():
    res = run(load("trivial.json"), "lower")
    assert res.bound == pytest.approx(0.2, abs=1e-2)


def test_upper_run_is_above_lower():
    spec = eps_spec(0.3)
    lo = run(spec, "lower", max_iter=40)
    hi = run(spec, "upper", max_iter=40)
    assert hi.bound >= hi.incumbent - 1e-9
    assert hi.bound >= lo.bound
    oracle_hi, _ = brute_force(spec, 1e-3, "upper")
    assert hi.bound >= oracle_hi - 2e-3


def test_threads_do_not_change_results():
    spec = eps_spec(0.2)
    a = run(spec, "lower", max_iter=30)
    b = run(spec, "lower", max_iter=30, threads=3)
    assert a.trace == b.trace


def test_pruning_is_neutral_on_short_run():
    spec = eps_spec(0.3)
    a = run(spec, "lower", max_iter=80)
    b = run(spec, "lower", max_iter=80, prune_nodes=False)
    assert [r.best_bound for r in a.trace] == [r.best_bound for r in b.trace]


def test_tolerance_stop_in_factor_mode():
    res = run(eps_spec(0.1), "lower", tol_delta=0.99, max_iter=500, error_mode="factor")
    assert res.stop_reason == "tolerance"
    assert res.geometric_factor <= 0.99


def test_empty_region_raises():
    with pytest.raises(EmptyFeasibleRegion):
        run(incompatible_spec(), "lower", max_iter=5)


@pytest.mark.parametrize("kwargs", [{"tol_delta": 0}, {"max_iter": 0}, {"direction": "sideways"},
                                    {"error_mode": "raw"}])
def test_bad_arguments_rejected(spec04, kwargs):
    with pytest.raises(ValueError):
        run(spec04, **kwargs)


def test_trace_round_trip():
    res = run(eps_spec(0.2), "lower", max_iter=15)
    buf = io.StringIO()
    write_trace(res.trace, buf, ["seed=0"])
    buf.seek(0)
    assert read_trace(buf) == res.trace


# -- grid oracle -------------------------------------------------------------------

def test_oracle_on_binary_instance(spec04):
    value, phi = brute_force(spec04, 1e-3)
    assert value == pytest.approx(0.2, abs=2e-3)
    assert build_ir_phi(spec04).contains(phi.flat(), 1e-9)


def test_oracle_empty_grid_is_infinite():
    assert brute_force_min(incompatible_spec(), 1e-3) == math.inf


def test_oracle_needs_two_hidden_states(rng):
    from proxybounds import simulate_forward

    inst = simulate_forward(rng, (3, 3, 2), 0.1)
    with pytest.raises(UnsupportedDimension):
        brute_force_min(inst.spec, 1e-2)
