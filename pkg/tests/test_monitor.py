"""Sensors, smooth clipping, Helmholtz smoothing, and target densities."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptrom.fields import FieldOnMesh, quadrature_integrate
from adaptrom.monitor import (SensorConfig, TargetDensity, dilatation_sensor,
                              helmholtz_smooth, normalize_target_density,
                              resolution_sensor, smooth_clip)


# ---------------------------------------------------------------------------
# smooth_clip
# ---------------------------------------------------------------------------

@settings(max_examples=300, deadline=None)
@given(x=st.floats(-1e3, 1e3), lo=st.floats(-10, 10),
       width=st.floats(0.1, 100))
def test_smooth_clip_stays_in_range(x, lo, width):
    hi = lo + width
    y = smooth_clip(x, lo, hi)
    assert lo - 1e-12 <= y <= hi + 1e-12


@settings(max_examples=100, deadline=None)
@given(lo=st.floats(-5, 5), width=st.floats(0.5, 50))
def test_smooth_clip_monotone_and_identity_in_interior(lo, width):
    hi = lo + width
    xs = np.linspace(lo - width, hi + width, 400)
    ys = smooth_clip(xs, lo, hi)
    assert np.all(np.diff(ys) >= -1e-12)
    delta = width / 10.0
    interior = (xs >= lo + delta) & (xs <= hi - delta)
    assert np.allclose(ys[interior], xs[interior], atol=1e-12)


def test_smooth_clip_saturates_exactly():
    assert smooth_clip(-100.0, 0.0, 1.0) == 0.0
    assert smooth_clip(100.0, 0.0, 1.0) == 1.0


def test_smooth_clip_continuity_at_knees():
    lo, hi, sharp = 0.0, 1.0, 10.0
    delta = (hi - lo) / sharp
    for knee in (lo - delta, lo + delta, hi - delta, hi + delta):
        eps = 1e-9
        a = smooth_clip(knee - eps, lo, hi, sharp)
        b = smooth_clip(knee + eps, lo, hi, sharp)
        assert abs(a - b) < 1e-7


def test_smooth_clip_rejects_bad_range():
    with pytest.raises(ValueError):
        smooth_clip(0.5, 1.0, 0.0)


# ---------------------------------------------------------------------------
# sensors
# ---------------------------------------------------------------------------

def test_resolution_sensor_constant_field_is_one(square_p2):
    xi = FieldOnMesh(square_p2, np.full(square_p2.n_nodes, 2.5))
    s = resolution_sensor(xi, SensorConfig())
    assert np.allclose(s.values, 1.0, atol=1e-12)


def test_resolution_sensor_bounded_below_by_one(square_p2, rng):
    xi = FieldOnMesh(square_p2, rng.standard_normal(square_p2.n_nodes))
    s = resolution_sensor(xi, SensorConfig())
    assert np.all(s.values >= 1.0 - 1e-12)


def test_dilatation_sensor_linear_compression(square_p2):
    # v = (-x, -y): div v = -2, sensor = +2 everywhere
    rho = np.ones(square_p2.n_nodes)
    v = -square_p2.nodes
    E = np.full(square_p2.n_nodes, 10.0)
    u = np.column_stack([rho, v, E])
    s = dilatation_sensor(FieldOnMesh(square_p2, u))
    assert np.allclose(s.values, 2.0, atol=1e-9)


# ---------------------------------------------------------------------------
# Helmholtz smoothing
# ---------------------------------------------------------------------------

def test_helmholtz_preserves_integral_and_constants(square_p2, rng):
    src = FieldOnMesh(square_p2, 1.0 + rng.random(square_p2.n_nodes))
    out = helmholtz_smooth(src, 0.2)
    assert quadrature_integrate(out)[0] == pytest.approx(
        quadrature_integrate(src)[0], rel=1e-9)
    const = FieldOnMesh(square_p2, np.full(square_p2.n_nodes, 4.0))
    out = helmholtz_smooth(const, 0.3)
    assert np.allclose(out.values, 4.0, atol=1e-9)


def test_helmholtz_reduces_oscillation(square_p2):
    x = square_p2.nodes[:, 0]
    src = FieldOnMesh(square_p2, np.sin(8 * np.pi * x))
    out = helmholtz_smooth(src, 0.2)
    assert np.max(np.abs(out.values)) < 0.5 * np.max(np.abs(src.values))


# ---------------------------------------------------------------------------
# target density
# ---------------------------------------------------------------------------

def test_normalize_target_density_theta(square_p2):
    x = square_p2.nodes[:, 0]
    rho = FieldOnMesh(square_p2, 1.0 + x)   # integral 1.5 over unit square
    td = normalize_target_density(rho)
    assert td.theta == pytest.approx(1.5, rel=1e-12)
    f = td.f_at(np.array([[0.5, 0.5]]))
    assert f[0] == pytest.approx(1.0, rel=1e-9)


def test_target_density_rejects_nonpositive(square_p2):
    x = square_p2.nodes[:, 0]
    with pytest.raises(ValueError):
        normalize_target_density(FieldOnMesh(square_p2, x - 0.5))


def test_target_density_from_callable(square_p2):
    td = TargetDensity.from_callable(square_p2,
                                     lambda p: 2.0 + 0.0 * p[:, 0])
    assert td.theta == pytest.approx(2.0, rel=1e-12)
    assert np.allclose(td.rho_at(np.array([[0.3, 0.7]])), 2.0)
