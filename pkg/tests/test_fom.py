"""Flow solver: free-stream preservation, Jacobian consistency, boundary
conditions, viscosity construction, and parameter continuation plumbing."""
import numpy as np
import pytest

from adaptrom import euler, fom
from adaptrom.fields import FieldOnMesh
from adaptrom.mesh import _rect_mesh, build_case_mesh

GAMMA = 1.4


def _warped_channel():
    def warp(x, y):
        b = np.sin(np.pi * x) * np.sin(np.pi * y)
        return x + 0.06 * b, y - 0.04 * b

    return _rect_mesh(5, 4, 2, None, tags=("wall", "outflow", "wall", "inflow"),
                      case="channel", warp=warp)


def test_free_stream_is_discrete_steady_state():
    mesh = _warped_channel()
    state = fom.FlowState.uniform(mesh, 2.0)
    params = fom.default_params(mesh)
    av = fom.update_viscosity(state, params)
    R = fom.regularized_residual(state, av, params)
    assert np.abs(R).max() <= 1e-12
    assert av.eta.values.max() == pytest.approx(0.0, abs=1e-12)


def test_jacobian_matches_finite_differences_without_jumps():
    # with a smooth (single-valued) state the frozen interface wave speed
    # has no effect and the Jacobian is exact
    mesh = build_case_mesh("channel", (4, 3), 2)
    dg = fom.get_dg(mesh)
    bc = fom.make_bc(mesh, 2.0)
    rng = np.random.default_rng(1)
    # perturbation vanishing on the boundary: interface and ghost jumps are
    # all zero, so the frozen interface wave speed is exact
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    t = (mesh.nodes - lo) / (hi - lo)
    bubble = (t[:, 0] * (1 - t[:, 0]) * t[:, 1] * (1 - t[:, 1]))[:, None]
    nodal = np.tile(euler.free_stream(2.0), (mesh.n_nodes, 1))
    nodal *= 1 + 0.8 * bubble * rng.standard_normal(nodal.shape)
    U = nodal[mesh.elements]
    mu = 0.1 + 0.05 * rng.random(mesh.n_nodes)
    visc = 0.3 * dg.viscous_operator(mu)
    _, J = dg.assemble(U, bc, GAMMA, visc_op=visc, want_jacobian=True)
    Jd = J.toarray()
    eps = 1e-6
    err = 0.0
    for j in rng.integers(0, U.size, 10):
        Up = U.reshape(-1).copy()
        Up[j] += eps
        Um = U.reshape(-1).copy()
        Um[j] -= eps
        Rp, _ = dg.assemble(Up.reshape(U.shape), bc, GAMMA, visc_op=visc)
        Rm, _ = dg.assemble(Um.reshape(U.shape), bc, GAMMA, visc_op=visc)
        col = (Rp - Rm).reshape(-1) / (2 * eps)
        err = max(err, np.abs(col - Jd[:, j]).max())
    assert err < 1e-6


def test_viscous_operator_symmetric_with_constant_nullspace():
    mesh = build_case_mesh("channel", (4, 3), 2)
    dg = fom.get_dg(mesh)
    mu = 0.1 + 0.05 * np.random.default_rng(2).random(mesh.n_nodes)
    L = dg.viscous_operator(mu)
    assert abs(L - L.T).max() < 1e-11
    assert np.abs(L @ np.ones(L.shape[0])).max() < 1e-11


def test_wall_ghost_state_reflects_normal_velocity():
    mesh = build_case_mesh("channel", (4, 3), 2)
    n = np.array([[0.0, 1.0]])
    u_in = np.array([[1.0, 0.3, 0.5, 3.0]])
    ug, _ = fom._ghost_state("wall", None, u_in, n)
    # tangential momentum kept, normal momentum flipped
    assert ug[0] == pytest.approx([1.0, 0.3, -0.5, 3.0])


def test_reg_params_ramp_respects_floors():
    p = fom.RegParams(1.0, 2.0, 0.1, ramp_factor=0.5,
                      lambda1_floor=0.3, lambda2_floor=0.3)
    seq = [p]
    for _ in range(5):
        seq.append(seq[-1].ramped())
    assert seq[-1].lambda1 == pytest.approx(0.3)
    assert seq[-1].lambda2 == pytest.approx(0.3)
    assert seq[-1].at_floor()


def test_update_viscosity_nonnegative_and_zero_for_uniform(square_p2):
    mesh = build_case_mesh("channel", (6, 3), 2)
    state = fom.FlowState.uniform(mesh, 2.0)
    av = fom.update_viscosity(state, fom.default_params(mesh))
    assert np.all(av.eta.values >= 0)
    assert av.total() == pytest.approx(0.0, abs=1e-12)


def test_flow_state_rejects_unphysical(square_p2):
    vals = np.tile(euler.free_stream(2.0), (square_p2.n_nodes, 1))
    vals[0, 0] = -1.0
    with pytest.raises(fom.InvalidStateError):
        fom.FlowState(FieldOnMesh(square_p2, vals), 2.0)


def test_solver_keeps_free_stream_exactly():
    mesh = _warped_channel()
    state = fom.FlowState.uniform(mesh, 2.0)
    res = fom.solve_steady(state, fom.default_params(mesh), max_iter=3)
    assert res.converged
    assert res.residuals[0] <= 1e-10


def test_continuation_reports_strictly_decreasing_weighted_viscosity():
    # shocked channel: the total added viscosity lambda1 * int(eta) must
    # decrease across accepted continuation stages
    mesh = build_case_mesh("channel", (20, 3), 2)
    x = mesh.nodes[:, 0]
    u1 = euler.free_stream(2.0)
    u2 = euler.post_shock_state(2.0)
    w = 0.5 * (1 + np.tanh((x - 0.5) / 0.05))
    state = fom.FlowState(FieldOnMesh(mesh, (1 - w)[:, None] * u1
                                      + w[:, None] * u2), 2.0)
    params = fom.RegParams(0.1, 2.0, mesh.mean_edge_length,
                           lambda1_floor=0.02, lambda2_floor=0.3)
    res = fom.continuation_solve(state, params, bc_overrides={"outflow": u2},
                                 max_iter=120)
    assert res.converged
    weighted = [l1 * tot for l1, _, tot in res.history]
    assert len(weighted) >= 2
    assert all(b < a for a, b in zip(weighted, weighted[1:]))
