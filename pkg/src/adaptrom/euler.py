"""Compressible Euler state algebra: fluxes, Jacobians, jump relations.

Conservative variables are ordered (rho, rho*v1, rho*v2, rho*E).
Nondimensionalization: free-stream density and speed are one, so the
free-stream pressure is 1/(gamma * Ma^2).
"""
from __future__ import annotations

import numpy as np

GAMMA_DEFAULT = 1.4


class InvalidStateError(ValueError):
    pass


def primitive(u: np.ndarray, gamma: float = GAMMA_DEFAULT):
    """(rho, v (..2), p) from conservative variables."""
    u = np.asarray(u, dtype=float)
    rho = u[..., 0]
    v = u[..., 1:3] / rho[..., None]
    ke = 0.5 * rho * np.einsum("...d,...d->...", v, v)
    p = (gamma - 1.0) * (u[..., 3] - ke)
    return rho, v, p


def pressure(u: np.ndarray, gamma: float = GAMMA_DEFAULT) -> np.ndarray:
    return primitive(u, gamma)[2]


def is_physical(u: np.ndarray, gamma: float = GAMMA_DEFAULT) -> bool:
    rho, _, p = primitive(u, gamma)
    return bool(np.all(rho > 0) and np.all(p > 0))


def euler_flux(u: np.ndarray, gamma: float = GAMMA_DEFAULT) -> np.ndarray:
    """Physical flux tensor, shape (..., 4, 2)."""
    rho, v, p = primitive(u, gamma)
    if np.any(rho <= 0) or np.any(p <= 0):
        raise InvalidStateError("nonpositive density or pressure")
    E = np.asarray(u)[..., 3]
    F = np.empty(np.shape(u) + (2,))
    for d in range(2):
        vd = v[..., d]
        F[..., 0, d] = rho * vd
        F[..., 1, d] = rho * vd * v[..., 0]
        F[..., 2, d] = rho * vd * v[..., 1]
        F[..., 3, d] = vd * (E + p)
        F[..., 1 + d, d] += p
    return F


def flux_jacobian(u: np.ndarray, gamma: float = GAMMA_DEFAULT) -> np.ndarray:
    """d(flux)/d(state) per direction, shape (..., 2, 4, 4)."""
    rho, v, p = primitive(u, gamma)
    E = np.asarray(u)[..., 3]
    v1, v2 = v[..., 0], v[..., 1]
    q2 = v1 * v1 + v2 * v2
    H = (E + p) / rho
    gm1 = gamma - 1.0
    A = np.zeros(np.shape(u)[:-1] + (2, 4, 4))
    # x-direction
    Ax = A[..., 0, :, :]
    Ax[..., 0, 1] = 1.0
    Ax[..., 1, 0] = 0.5 * gm1 * q2 - v1 * v1
    Ax[..., 1, 1] = (3.0 - gamma) * v1
    Ax[..., 1, 2] = -gm1 * v2
    Ax[..., 1, 3] = gm1
    Ax[..., 2, 0] = -v1 * v2
    Ax[..., 2, 1] = v2
    Ax[..., 2, 2] = v1
    Ax[..., 3, 0] = v1 * (0.5 * gm1 * q2 - H)
    Ax[..., 3, 1] = H - gm1 * v1 * v1
    Ax[..., 3, 2] = -gm1 * v1 * v2
    Ax[..., 3, 3] = gamma * v1
    # y-direction
    Ay = A[..., 1, :, :]
    Ay[..., 0, 2] = 1.0
    Ay[..., 1, 0] = -v1 * v2
    Ay[..., 1, 1] = v2
    Ay[..., 1, 2] = v1
    Ay[..., 2, 0] = 0.5 * gm1 * q2 - v2 * v2
    Ay[..., 2, 1] = -gm1 * v1
    Ay[..., 2, 2] = (3.0 - gamma) * v2
    Ay[..., 2, 3] = gm1
    Ay[..., 3, 0] = v2 * (0.5 * gm1 * q2 - H)
    Ay[..., 3, 1] = -gm1 * v1 * v2
    Ay[..., 3, 2] = H - gm1 * v2 * v2
    Ay[..., 3, 3] = gamma * v2
    return A


def sound_speed(u: np.ndarray, gamma: float = GAMMA_DEFAULT) -> np.ndarray:
    rho, _, p = primitive(u, gamma)
    return np.sqrt(gamma * p / rho)


def max_wave_speed(u: np.ndarray, n: np.ndarray, gamma: float = GAMMA_DEFAULT) -> np.ndarray:
    """|v.n| + c per state."""
    _, v, _ = primitive(u, gamma)
    return np.abs(np.einsum("...d,...d->...", v, n)) + sound_speed(u, gamma)


def free_stream(mach: float, gamma: float = GAMMA_DEFAULT,
                angle: float = 0.0) -> np.ndarray:
    """Unit-density, unit-speed free stream at the given Mach number."""
    if mach <= 0:
        raise InvalidStateError("free-stream Mach number must be positive")
    p = 1.0 / (gamma * mach * mach)
    v = np.array([np.cos(angle), np.sin(angle)])
    E = p / (gamma - 1.0) + 0.5
    return np.array([1.0, v[0], v[1], E])


def normal_shock_ratios(mach: float, gamma: float = GAMMA_DEFAULT):
    """Rankine-Hugoniot jump ratios across a standing normal shock:
    (rho2/rho1, p2/p1, M2)."""
    if mach <= 1.0:
        raise InvalidStateError("normal shock requires Mach > 1")
    m2 = mach * mach
    rho_ratio = (gamma + 1.0) * m2 / ((gamma - 1.0) * m2 + 2.0)
    p_ratio = 1.0 + 2.0 * gamma / (gamma + 1.0) * (m2 - 1.0)
    m2_post = np.sqrt(((gamma - 1.0) * m2 + 2.0) / (2.0 * gamma * m2 - (gamma - 1.0)))
    return rho_ratio, p_ratio, m2_post


def post_shock_state(mach: float, gamma: float = GAMMA_DEFAULT) -> np.ndarray:
    """Conservative state downstream of a standing normal shock whose
    upstream is free_stream(mach) moving in +x."""
    u1 = free_stream(mach, gamma)
    rr, pr, _ = normal_shock_ratios(mach, gamma)
    rho2 = rr * u1[0]
    v2 = u1[1] / u1[0] / rr
    p2 = pr * (1.0 / (gamma * mach * mach))
    E2 = p2 / (gamma - 1.0) + 0.5 * rho2 * v2 * v2
    return np.array([rho2, rho2 * v2, 0.0, E2])
