"""Snapshot handling, weighted POD, RBF surrogates, prediction, the error
metric, and model persistence."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptrom import rom
from adaptrom.fields import FieldOnMesh
from adaptrom.mapping import MeshMapping


def _snapshots(mesh, rng, n_train=4, m=2, kind="mapped-solution"):
    runs = [(1.0 + k, FieldOnMesh(mesh, rng.standard_normal((mesh.n_nodes, m))))
            for k in range(n_train)]
    return rom.assemble_snapshots(runs, kind)


def test_assemble_sorts_and_rejects_duplicates(square_p2, rng):
    f = FieldOnMesh(square_p2, rng.standard_normal(square_p2.n_nodes))
    s = rom.assemble_snapshots([(2.0, f), (1.0, f)], "mapped-solution")
    assert np.array_equal(s.parameters, [1.0, 2.0])
    with pytest.raises(rom.RomError):
        rom.assemble_snapshots([(1.0, f), (1.0, f)], "mapped-solution")


def test_pod_modes_weighted_orthonormal(square_p2, rng):
    s = _snapshots(square_p2, rng)
    b = rom.compute_pod(s, 3)
    G = b.modes.T @ (b.weights[:, None] * b.modes)
    assert np.allclose(G, np.eye(3), atol=1e-10)
    assert np.all(np.diff(b.singular_values) <= 1e-12)


def test_pod_full_basis_reproduces_snapshots(square_p2, rng):
    s = _snapshots(square_p2, rng)
    b = rom.compute_pod(s, s.n_train)
    for k in range(s.n_train):
        phys = s.fields[:, k].reshape(-1, s.n_components) * s.scale
        alpha = rom.project_coefficients(b, phys)
        rec = rom.reconstruct(b, alpha)
        assert np.allclose(rec, phys, atol=1e-9)


def test_pod_sign_convention_deterministic(square_p2, rng):
    s = _snapshots(square_p2, rng)
    b1 = rom.compute_pod(s, 2)
    b2 = rom.compute_pod(s, 2)
    assert np.array_equal(b1.modes, b2.modes)
    for k in range(2):
        j = int(np.argmax(np.abs(b1.modes[:, k])))
        assert b1.modes[j, k] > 0


def test_pod_tail_identity(square_p2, rng):
    # weighted reconstruction error at truncation N equals the root sum of
    # squared discarded singular values
    s = _snapshots(square_p2, rng, n_train=5)
    for N in range(1, s.n_train + 1):
        b = rom.compute_pod(s, N)
        err2 = 0.0
        for k in range(s.n_train):
            x = s.fields[:, k]
            alpha = b.modes.T @ (b.weights * x)
            r = x - b.modes @ alpha
            err2 += float(r @ (b.weights * r))
        tail = float(np.sum(b.singular_values[N:] ** 2))
        assert np.sqrt(err2) == pytest.approx(np.sqrt(tail), rel=1e-8, abs=1e-12)


def test_rbf_interpolates_training_points(rng):
    mu = np.array([1.0, 2.0, 3.0])
    alpha = rng.standard_normal((3, 4))
    surr = rom.train_rbf(mu, alpha, epsilon=20.0)
    for i, m in enumerate(mu):
        assert np.allclose(surr(m), alpha[i], atol=1e-7)
    assert surr.in_hull(2.5) and not surr.in_hull(3.5)


def test_rbf_rejects_duplicate_parameters(rng):
    with pytest.raises(rom.RomError):
        rom.train_rbf(np.array([1.0, 1.0]), rng.standard_normal((2, 2)))


def test_predict_composes_solution_and_mapping(square_p2, rng):
    s_u = _snapshots(square_p2, rng, m=4)
    runs = [(1.0 + k, MeshMapping(square_p2, square_p2.nodes
                                  + 0.001 * k * np.ones((square_p2.n_nodes, 2))))
            for k in range(4)]
    s_phi = rom.assemble_snapshots(runs, "mapping")
    b_u = rom.compute_pod(s_u, 4)
    b_phi = rom.compute_pod(s_phi, 4)
    surr_u = rom.train_rbf(s_u.parameters, np.array(
        [rom.project_coefficients(b_u, s_u.fields[:, k]) for k in range(4)]))
    surr_phi = rom.train_rbf(s_phi.parameters, np.array(
        [rom.project_coefficients(b_phi, s_phi.fields[:, k]) for k in range(4)]))
    pred = rom.predict(surr_u, b_u, surr_phi, b_phi, 2.0)
    assert not pred.extrapolated and not pred.tangled
    assert pred.min_jacobian > 0
    truth = s_phi.fields[:, 1].reshape(-1, 2) * s_phi.scale
    assert np.allclose(pred.mapping.phi, truth, atol=1e-6)
    out = rom.predict(surr_u, b_u, surr_phi, b_phi, 9.0)
    assert out.extrapolated


def test_relative_error_oracles(square_p2):
    t = FieldOnMesh(square_p2, np.full(square_p2.n_nodes, 2.0))
    a = FieldOnMesh(square_p2, np.full(square_p2.n_nodes, 2.2))
    assert rom.relative_error(t, t) == 0.0
    assert rom.relative_error(t, a) == pytest.approx(0.1, rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(c=st.floats(0.1, 10))
def test_relative_error_scale_invariant(c):
    w = np.array([0.2, 0.3, 0.5])
    t = np.array([1.0, -2.0, 3.0])
    a = np.array([1.1, -1.8, 2.7])
    e1 = rom.relative_error(t, a, weights=w)
    e2 = rom.relative_error(c * t, c * a, weights=w)
    assert np.isclose(e1, e2, rtol=1e-12)


def test_model_io_roundtrip_bit_exact(tmp_path, square_p2, rng):
    s = _snapshots(square_p2, rng, m=4)
    b = rom.compute_pod(s, 3)
    surr = rom.train_rbf(s.parameters, np.array(
        [rom.project_coefficients(b, s.fields[:, k]) for k in range(4)]))
    p1, p2 = tmp_path / "m1.bin", tmp_path / "m2.bin"
    rom.save_model(p1, b, surr)
    b2, surr2 = rom.load_model(p1, square_p2)
    assert np.array_equal(b2.modes, b.modes)
    assert np.array_equal(surr2.beta, surr.beta)
    assert np.allclose(surr2(1.7), surr(1.7), atol=0)
    rom.save_model(p2, b2, surr2)
    assert p1.read_bytes() == p2.read_bytes()
