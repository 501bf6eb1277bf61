"""Sensors and target-density construction for mesh adaptation.

Smooth clipping, dilatation shock sensor, gradient-based resolution sensor,
Helmholtz smoothing, and normalization of the mesh density.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fem import get_cg
from .fields import FieldOnMesh, quadrature_integrate
from .interp import interpolate_to_points


@dataclass
class SensorConfig:
    s_min: float = 0.0
    s_max_factor: float = 0.5
    length_scale: float | None = None   # None: 2x mean element edge length
    clip_sharpness: float = 10.0
    bound_on_square: bool = True        # clip bound applies to |grad xi|^2

    def __post_init__(self):
        if self.s_min < 0 or self.s_max_factor <= 0 or self.clip_sharpness <= 0:
            raise ValueError("invalid sensor configuration")
        if self.length_scale is not None and self.length_scale <= 0:
            raise ValueError("length_scale must be positive")

    def resolved_length(self, mesh) -> float:
        return self.length_scale if self.length_scale is not None \
            else 2.0 * mesh.mean_edge_length


def smooth_clip(x, s_min: float, s_max: float, sharpness: float = 10.0):
    """Smooth, monotone limiter of x into [s_min, s_max].

    Identity in the interior with C1 quadratic blends of half-width
    (s_max - s_min)/sharpness around each bound; exactly constant beyond
    them, so the output never leaves [s_min, s_max].
    """
    if s_min >= s_max:
        raise ValueError(f"need s_min < s_max, got [{s_min}, {s_max}]")
    rng = s_max - s_min
    delta = min(rng / sharpness, 0.5 * rng)
    x = np.asarray(x, dtype=float)
    lo_blend = s_min + (x - (s_min - delta)) ** 2 / (4.0 * delta)
    hi_blend = s_max - ((s_max + delta) - x) ** 2 / (4.0 * delta)
    out = np.select(
        [x <= s_min - delta, x < s_min + delta, x <= s_max - delta,
         x < s_max + delta],
        [s_min, lo_blend, x, hi_blend],
        default=s_max)
    return out if out.ndim else float(out)


class TargetDensity:
    """Strictly positive mesh density rho' with its uniform redistribution
    theta and the transport right-hand side f = theta / rho'."""

    def __init__(self, rho_prime: FieldOnMesh, theta: float,
                 rho_fn: Callable[[np.ndarray], np.ndarray] | None = None):
        if theta <= 0:
            raise ValueError("theta must be positive")
        self.rho_prime = rho_prime
        self.theta = float(theta)
        self.rho_fn = rho_fn

    @property
    def mesh(self):
        return self.rho_prime.mesh

    def rho_at(self, pts: np.ndarray, clamp_far: bool = False) -> np.ndarray:
        if self.rho_fn is not None:
            return np.asarray(self.rho_fn(np.atleast_2d(pts)), dtype=float)
        return interpolate_to_points(self.rho_prime, pts,
                                     clamp_far=clamp_far)[:, 0]

    def f_at(self, pts: np.ndarray, clamp_far: bool = False) -> np.ndarray:
        rho = self.rho_at(pts, clamp_far=clamp_far)
        if np.any(rho <= 0):
            raise ValueError("target density is nonpositive at interpolated points")
        return self.theta / rho

    @classmethod
    def from_callable(cls, mesh, fn) -> "TargetDensity":
        nodal = np.asarray(fn(mesh.nodes), dtype=float)
        field = FieldOnMesh(mesh, nodal)
        theta = float(quadrature_integrate(field)[0]) / mesh.area
        return cls(field, theta, rho_fn=fn)


def normalize_target_density(rho_prime: FieldOnMesh) -> TargetDensity:
    if np.any(rho_prime.values <= 0):
        raise ValueError("target density must be strictly positive")
    theta = float(quadrature_integrate(rho_prime)[0]) / rho_prime.mesh.area
    return TargetDensity(rho_prime, theta)


def dilatation_sensor(state, coords: np.ndarray | None = None) -> FieldOnMesh:
    """Shock sensor: negative divergence of the velocity, computed by exact
    differentiation of the nodal velocity polynomial.

    `coords` selects the nodal configuration (pass the mapped coordinates
    when the state lives on an adapted mesh)."""
    conserved = state.conserved if hasattr(state, "conserved") else state
    mesh = conserved.mesh
    rho = conserved.values[:, 0]
    if np.any(rho <= 0):
        raise ValueError("nonpositive density in dilatation sensor")
    vel = conserved.values[:, 1:3] / rho[:, None]
    gv = FieldOnMesh(mesh, vel).nodal_gradient(coords)    # (n, 2, 2)
    div = gv[:, 0, 0] + gv[:, 1, 1]
    return FieldOnMesh(mesh, -div)


def resolution_sensor(xi: FieldOnMesh, config: SensorConfig) -> FieldOnMesh:
    """s_h = sqrt(1 + clip(|grad xi|^2, 0, s_max)); always >= 1."""
    if xi.n_components != 1:
        raise ValueError("resolution sensor expects a scalar field")
    g = xi.nodal_gradient()[:, 0, :]
    gsq = np.einsum("nd,nd->n", g, g)
    base = gsq if config.bound_on_square else np.sqrt(gsq)
    s_max = config.s_max_factor * float(np.max(base))
    if s_max <= 1e-300:
        return FieldOnMesh(xi.mesh, np.ones(xi.mesh.n_nodes))
    clipped = smooth_clip(gsq, config.s_min, s_max, config.clip_sharpness)
    return FieldOnMesh(xi.mesh, np.sqrt(1.0 + np.maximum(clipped, 0.0)))


def helmholtz_smooth(source: FieldOnMesh, ell: float,
                     bc: str = "neumann-all",
                     coords: np.ndarray | None = None) -> FieldOnMesh:
    """Solve u - div(ell^2 grad u) = source.

    bc 'neumann-all': zero-flux everywhere (integral-preserving);
    bc 'dirichlet-wall': u = 0 on wall nodes, zero flux elsewhere.
    """
    if ell <= 0:
        raise ValueError("smoothing length must be positive")
    if bc not in ("neumann-all", "dirichlet-wall"):
        raise ValueError(f"unknown boundary condition {bc!r}")
    mesh = source.mesh
    ops = get_cg(mesh, coords)
    dirichlet = None
    if bc == "dirichlet-wall":
        wall_segs = set(mesh.segment_index("wall"))
        bn = mesh.boundary_nodes
        dirichlet = np.array(sorted(_wall_node_set(mesh, wall_segs)), dtype=np.int64) \
            if len(bn) else None
    out = np.column_stack([
        ops.helmholtz(source.values[:, k], ell, dirichlet)
        for k in range(source.n_components)])
    return FieldOnMesh(mesh, out)


def _wall_node_set(mesh, wall_segs) -> set[int]:
    nodes: set[int] = set()
    for e, f, s in mesh.boundary_faces:
        if int(s) in wall_segs:
            for j in mesh._face_node_ids(f):
                nodes.add(int(mesh.elements[e, j]))
    return nodes
