"""Joint witnesses that certify a bound is attained."""

import json

import numpy as np
import pytest

from proxybounds import PhiVector, find_witness, identify_exact, simulate_forward
from proxybounds.errors import ShapeMismatch
from proxybounds.tightness import JointWitness, verify_witness

from conftest import PHI_OPT_04

# Rows (w1,u1), (w1,u2), (w2,u1), (w2,u2); columns (y,x), (y,x'), (not y,x), (not y,x').
PUBLISHED_WITNESS = np.array([
    [0.00, 0.15, 0.18, 0.15],
    [0.08, 0.00, 0.00, 0.00],
    [0.00, 0.10, 0.12, 0.10],
    [0.12, 0.00, 0.00, 0.00],
])
PUBLISHED_P = np.array([[0.6, 0.4], [0.4, 0.6]])


def tensor_from_matrix(M):
    """q[y][w][u][x] from the row/column layout above."""
    q = np.zeros((2, 2, 2, 2))
    for w in range(2):
        for u in range(2):
            for y in range(2):
                for x in range(2):
                    q[y, w, u, x] = M[2 * w + u, 2 * y + x]
    return q


def phi_opt():
    return PhiVector(*(np.array(v) for v in PHI_OPT_04))


def test_published_witness_verifies(spec04):
    w = JointWitness(tensor_from_matrix(PUBLISHED_WITNESS), PUBLISHED_P)
    report = verify_witness(w, phi_opt(), spec04)
    assert report.ok, report.worst
    assert report.failed() == []


def test_other_column_order_fails(spec04):
    swapped = PUBLISHED_WITNESS[:, [0, 2, 1, 3]]
    w = JointWitness(tensor_from_matrix(swapped), PUBLISHED_P)
    assert not verify_witness(w, phi_opt(), spec04)


def test_perturbed_entry_reports_marginal_violation(spec04):
    M = PUBLISHED_WITNESS.copy()
    M[0, 1] += 0.05
    report = verify_witness(JointWitness(tensor_from_matrix(M), PUBLISHED_P), phi_opt(), spec04)
    assert not report
    assert "marginal" in report.failed()
    assert report.worst["marginal"] == pytest.approx(0.05)


def test_uniform_tensor_violates_transition_bounds(spec04):
    w = JointWitness(np.full((2, 2, 2, 2), 1 / 16), np.full((2, 2), 0.5))
    report = verify_witness(w, phi_opt(), spec04)
    assert not report
    assert "transition bounds" in report.failed()


def test_shape_mismatch(spec04):
    with pytest.raises(ShapeMismatch):
        verify_witness(JointWitness(np.zeros((2, 2, 2)), PUBLISHED_P), phi_opt(), spec04)
    with pytest.raises(ShapeMismatch):
        verify_witness(JointWitness(np.zeros((2, 2, 2, 2)), np.eye(3)), phi_opt(), spec04)


def test_search_finds_witness_for_published_optimum(spec04):
    w = find_witness(phi_opt(), spec04, restarts=32, seed=0)
    assert w is not None
    assert verify_witness(w, phi_opt(), spec04)
    back = json.loads(w.to_json())
    assert np.allclose(back["q"], w.q) and np.allclose(back["P"], w.P)


def test_point_bounds_reconstruct_the_joint():
    inst = simulate_forward(np.random.default_rng(4), (2, 2, 2), 0.0)
    _, phi = identify_exact(inst.spec)
    w = find_witness(phi, inst.spec, restarts=1)
    assert w is not None
    assert np.allclose(w.P, inst.transition, atol=1e-9)
    expected = np.einsum("wu,yux->ywux", inst.transition, inst.joint)
    assert np.allclose(w.q, expected / expected.sum(), atol=1e-7)


def test_infeasible_phi_rejected(spec04):
    bad = PhiVector(np.array([0.5, 0.5]), np.array([0.3, 0.2]), np.array([0.5, 0.0]))
    assert find_witness(bad, spec04) is None


def test_search_is_deterministic(spec04):
    a = find_witness(phi_opt(), spec04, seed=3)
    b = find_witness(phi_opt(), spec04, seed=3)
    assert a.q.tobytes() == b.q.tobytes() and a.P.tobytes() == b.P.tobytes()


@pytest.mark.parametrize("seed", [0, 1, 2, 5, 9])
def test_every_returned_witness_verifies(seed):
    inst = simulate_forward(np.random.default_rng(seed), (2, 2, 2), 0.1)
    j = inst.joint
    psi = j[:, :, 0].sum(axis=0)
    phi = PhiVector(j[0, :, 0], psi, j.sum(axis=(0, 2)) - psi)
    w = find_witness(phi, inst.spec, restarts=8, seed=seed)
    if w is not None:
        assert verify_witness(w, phi, inst.spec)


def test_known_truth_admits_a_witness():
    # The simulated joint itself is a witness for the true phi.
    inst = simulate_forward(np.random.default_rng(21), (2, 2, 2), 0.1)
    j = inst.joint
    psi = j[:, :, 0].sum(axis=0)
    phi = PhiVector(j[0, :, 0], psi, j.sum(axis=(0, 2)) - psi)
    q = np.einsum("wu,yux->ywux", inst.transition, j)
    assert verify_witness(JointWitness(q / q.sum(), inst.transition), phi, inst.spec)
