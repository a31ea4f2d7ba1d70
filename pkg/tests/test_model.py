"""Problem loading, the linear constraint set, exact identification and the
forward simulator."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proxybounds import (PhiVector, build_ir_phi, dump_problem, identify_exact, load_problem,
                         make_spec, simulate_forward)
from proxybounds.errors import NegativeRecovery, NotInvertible, ParseError, ValidationError
from proxybounds.model import sum_of_ratios

from conftest import PHI_OPT_04, data_path, eps_spec


def _raw(name="eps04.json"):
    return json.loads(data_path(name).read_text())


def test_binary_instance_loads(spec04):
    assert (spec04.d, spec04.n_w, spec04.n_x) == (2, 2, 2)
    assert spec04.f_yx == pytest.approx(0.2)
    assert spec04.f_x == pytest.approx(0.5)
    assert spec04.psi_min == 0.01


def test_mass_below_one_rejected():
    raw = _raw()
    raw["observed"]["p"][1][1][1] -= 0.1
    with pytest.raises(ValidationError, match="mass 0.9 ≠ 1"):
        load_problem(json.dumps(raw))


def test_lower_above_upper_rejected():
    raw = _raw()
    raw["transition_bounds"]["lower"][0][0] = 0.7
    raw["transition_bounds"]["upper"][0][0] = 0.6
    with pytest.raises(ValidationError, match=r"lower > upper at \(0,0\)"):
        load_problem(json.dumps(raw))


def test_broken_example_file_names_the_invariant():
    with pytest.raises(ValidationError, match="mass 1.01"):
        load_problem(data_path("broken.json").read_bytes())


@pytest.mark.parametrize("text", [b"{", b"\xff\xfe", b"[]", b'{"dims": 3}'])
def test_malformed_input_is_a_parse_or_validation_error(text):
    with pytest.raises((ParseError, ValidationError)):
        load_problem(text)


def test_missing_key_reported():
    raw = _raw()
    del raw["transition_bounds"]
    with pytest.raises((ParseError, ValidationError), match="transition_bounds"):
        load_problem(json.dumps(raw))


def test_dims_must_match_arrays():
    raw = _raw()
    raw["dims"]["u"] = 3
    with pytest.raises(ValidationError):
        load_problem(json.dumps(raw))


def test_psi_min_above_feasible_range_rejected():
    raw = _raw()
    raw["psi_min"] = 0.3
    with pytest.raises(ValidationError, match="psi_min"):
        load_problem(json.dumps(raw))


def test_weights_length_checked():
    raw = _raw("ace_eps04.json")
    raw["weights_pi"] = [1.0]
    with pytest.raises(ValidationError, match="weights_pi"):
        load_problem(json.dumps(raw))


def test_dump_round_trip_is_exact(rng):
    inst = simulate_forward(rng, (2, 3, 2), 0.05)
    text = dump_problem(inst.spec)
    back = load_problem(text)
    assert np.array_equal(back.observed.p, inst.spec.observed.p)
    assert np.array_equal(back.transition_bounds.lower, inst.spec.transition_bounds.lower)
    assert back.psi_min == inst.spec.psi_min
    assert dump_problem(back) == text


def test_loaded_arrays_are_read_only(spec04):
    with pytest.raises(ValueError):
        spec04.observed.p[0, 0, 0] = 1.0


def test_constraint_count_for_binary_instance(spec04):
    ir = build_ir_phi(spec04)
    assert ir.A.shape == (15, 6)
    assert ir.senses.count("=") == 3
    assert len([s for s in ir.senses if s != "="]) == 12
    assert ir.lower.shape == ir.upper.shape == (6,)


def test_reported_optimizer_is_feasible(spec04):
    theta, psi, omega = PHI_OPT_04
    assert build_ir_phi(spec04).contains(np.concatenate([theta, psi, omega]))


def test_point_identity_bounds_pin_theta():
    p = np.array([[[0.1, 0.2], [0.15, 0.05]], [[0.2, 0.1], [0.05, 0.15]]])
    spec = make_spec(p, np.eye(2), np.eye(2))
    ir = build_ir_phi(spec)
    from proxybounds.geometry import phi_bounds

    lo, hi = phi_bounds(ir)
    assert np.allclose(lo[:2], p[0, :, 0]) and np.allclose(hi[:2], p[0, :, 0])


def test_psi_lower_box_is_psi_min(spec04):
    ir = build_ir_phi(spec04)
    assert np.all(ir.lower[2:4] == spec04.psi_min)


def test_identity_transition_is_plug_in():
    p = np.array([[[0.1, 0.2], [0.15, 0.05]], [[0.2, 0.1], [0.05, 0.15]]])
    spec = make_spec(p, np.eye(2), np.eye(2))
    value, phi = identify_exact(spec)
    assert np.allclose(phi.theta, p[0, :, 0])
    f_u = p.sum(axis=(0, 2))
    direct = float(np.sum(p[0, :, 0] / p[:, :, 0].sum(axis=0) * f_u))
    assert value == pytest.approx(direct, abs=1e-12)


def test_rank_one_transition_not_invertible():
    p = np.array([[[0.1, 0.2], [0.15, 0.05]], [[0.2, 0.1], [0.05, 0.15]]])
    P = np.full((2, 2), 0.5)
    with pytest.raises(NotInvertible):
        identify_exact(make_spec(p, P, P))


def test_non_square_transition_not_invertible(rng):
    inst = simulate_forward(rng, (2, 3, 2), 0.0)
    with pytest.raises(NotInvertible):
        identify_exact(inst.spec)


def test_incompatible_table_gives_negative_recovery():
    # W nearly copies U, but the observed table says otherwise.
    P = np.array([[0.9, 0.1], [0.1, 0.9]])
    p = np.array([[[0.0, 0.25], [0.25, 0.0]], [[0.25, 0.0], [0.0, 0.25]]])
    p[0, 1, 0], p[1, 0, 0] = 0.3, 0.2
    p[0, 0, 1], p[1, 1, 1] = 0.05, 0.2
    p /= p.sum()
    with pytest.raises(NegativeRecovery):
        identify_exact(make_spec(p, P, P, psi_min=1e-3))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 2, 2), (3, 3, 2), (2, 2, 3)]))
def test_exact_identification_inverts_simulator(seed, dims):
    inst = simulate_forward(np.random.default_rng(seed), dims, 0.0)
    value, _ = identify_exact(inst.spec)
    assert value == pytest.approx(inst.truth, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.3))
def test_true_phi_satisfies_constraint_set(seed, widening):
    inst = simulate_forward(np.random.default_rng(seed), (2, 3, 2), widening)
    j = inst.joint
    psi = j[:, :, 0].sum(axis=0)
    phi = PhiVector(j[0, :, 0], psi, j.sum(axis=(0, 2)) - psi)
    assert build_ir_phi(inst.spec).violation(phi.flat()) <= 1e-12


def test_simulator_is_deterministic():
    a = simulate_forward(np.random.default_rng(42), (2, 2, 2), 0.1)
    b = simulate_forward(np.random.default_rng(42), (2, 2, 2), 0.1)
    assert dump_problem(a.spec) == dump_problem(b.spec)
    assert a.truth == b.truth


def test_sum_of_ratios_on_reported_optimum():
    theta, psi, omega = (np.array(v) for v in PHI_OPT_04)
    assert sum_of_ratios(PhiVector(theta, psi, omega)) == 0.0


def test_eps_instances_share_tables():
    specs = [eps_spec(e) for e in (0.1, 0.2, 0.3, 0.4)]
    for s in specs[1:]:
        assert np.array_equal(s.observed.p, specs[0].observed.p)
    widths = [float(s.transition_bounds.upper[0, 1] - s.transition_bounds.lower[0, 1])
              for s in specs]
    assert widths == pytest.approx([0.1, 0.2, 0.3, 0.4])
