"""Compressible-flow state algebra against hand-computed oracles."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptrom import euler

GAMMA = 1.4


def test_primitive_roundtrip_hand_values():
    # rho=2, v=(3,-1), p=5: E = p/(gamma-1) + rho|v|^2/2 = 12.5 + 10 = 22.5
    u = np.array([2.0, 6.0, -2.0, 22.5])
    rho, v, p = euler.primitive(u, GAMMA)
    assert rho == pytest.approx(2.0)
    assert v == pytest.approx([3.0, -1.0])
    assert p == pytest.approx(5.0)
    assert euler.pressure(u, GAMMA) == pytest.approx(5.0)


def test_flux_hand_values():
    # same state; column 0 (x-flux): [rho u, rho u^2 + p, rho u v, u(E+p)]
    u = np.array([2.0, 6.0, -2.0, 22.5])
    F = euler.euler_flux(u, GAMMA)
    assert F[..., 0] == pytest.approx([6.0, 23.0, -6.0, 3.0 * 27.5])
    assert F[..., 1] == pytest.approx([-2.0, -6.0, 7.0, -27.5])


def test_flux_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    u = np.array([1.3, 0.4, -0.2, 2.9])
    A = euler.flux_jacobian(u, GAMMA)
    eps = 1e-7
    for k in range(4):
        du = np.zeros(4)
        du[k] = eps
        fd = (euler.euler_flux(u + du, GAMMA) - euler.euler_flux(u - du, GAMMA)) / (2 * eps)
        assert np.allclose(A[0, :, k], fd[:, 0], atol=1e-6)
        assert np.allclose(A[1, :, k], fd[:, 1], atol=1e-6)


def test_free_stream_normalization():
    for mach in (0.5, 2.0, 4.0):
        u = euler.free_stream(mach, GAMMA)
        rho, v, p = euler.primitive(u, GAMMA)
        assert rho == pytest.approx(1.0)
        assert np.hypot(*v) == pytest.approx(1.0)
        assert p == pytest.approx(1.0 / (GAMMA * mach * mach))
        c = euler.sound_speed(u, GAMMA)
        assert np.hypot(*v) / c == pytest.approx(mach)


def test_normal_shock_ratios_hand_oracle():
    # Ma=2, gamma=1.4: rho2/rho1 = 8/3, p2/p1 = 4.5, M2^2 = 3.6/10.8 = 1/3
    rr, pr, m2 = euler.normal_shock_ratios(2.0, GAMMA)
    assert rr == pytest.approx(8.0 / 3.0, rel=1e-12)
    assert pr == pytest.approx(4.5, rel=1e-12)
    assert m2 == pytest.approx(np.sqrt(1.0 / 3.0), rel=1e-12)


def test_post_shock_state_satisfies_jump_conditions():
    for mach in (1.5, 2.0, 4.0):
        u1 = euler.free_stream(mach, GAMMA)
        u2 = euler.post_shock_state(mach, GAMMA)
        rr, pr, _ = euler.normal_shock_ratios(mach, GAMMA)
        assert u2[0] == pytest.approx(rr * u1[0], rel=1e-12)
        assert euler.pressure(u2, GAMMA) == pytest.approx(
            pr * euler.pressure(u1, GAMMA), rel=1e-12)
        # mass flux continuity rho1 u1 = rho2 u2
        assert u2[1] == pytest.approx(u1[1], rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(rho=st.floats(0.01, 100), vx=st.floats(-10, 10), vy=st.floats(-10, 10),
       p=st.floats(0.01, 100))
def test_physical_states_roundtrip(rho, vx, vy, p):
    E = p / (GAMMA - 1) + 0.5 * rho * (vx * vx + vy * vy)
    u = np.array([rho, rho * vx, rho * vy, E])
    assert euler.is_physical(u, GAMMA)
    r2, v2, p2 = euler.primitive(u, GAMMA)
    assert np.isclose(r2, rho) and np.isclose(p2, p, rtol=1e-9, atol=1e-12)


def test_unphysical_states_detected():
    assert not euler.is_physical(np.array([-1.0, 0, 0, 1.0]), GAMMA)
    # kinetic energy exceeding total: negative pressure
    assert not euler.is_physical(np.array([1.0, 3.0, 0, 1.0]), GAMMA)


def test_max_wave_speed():
    u = euler.free_stream(2.0, GAMMA)
    c = euler.sound_speed(u, GAMMA)
    assert euler.max_wave_speed(u, np.array([1.0, 0.0]), GAMMA) \
        == pytest.approx(1.0 + c)
    assert euler.max_wave_speed(u, np.array([0.0, 1.0]), GAMMA) \
        == pytest.approx(float(c))
