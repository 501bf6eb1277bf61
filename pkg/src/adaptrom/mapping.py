"""Mesh mappings: duplicate-DOF averaging, Jacobians, corner snapping."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fields import TanglingError
from .mesh import ReferenceMesh

log = logging.getLogger(__name__)


@dataclass
class MeshMapping:
    """Per-node image of the reference mesh under the transport map."""

    mesh: ReferenceMesh
    phi: np.ndarray                  # (n_nodes, 2)
    parameter: float | None = None

    def __post_init__(self):
        self.phi = np.ascontiguousarray(self.phi, dtype=np.float64)
        if self.phi.shape != (self.mesh.n_nodes, 2):
            raise ValueError("phi must have one 2D image point per mesh node")

    @classmethod
    def identity(cls, mesh: ReferenceMesh, parameter=None) -> "MeshMapping":
        return cls(mesh, mesh.nodes.copy(), parameter)

    def min_jacobian(self) -> float:
        return float(np.min(mapping_jacobian(self)[1]))

    def boundary_mismatch(self) -> float:
        """Max |g(phi)| over boundary nodes, using each node's own segment."""
        bn = self.mesh.boundary_nodes
        worst = 0.0
        for nid, sid in bn:
            val = abs(float(self.mesh.segments[sid].g(self.phi[nid][None, :])[0]))
            worst = max(worst, val)
        return worst


def average_duplicates(mesh: ReferenceMesh, elem_vals: np.ndarray) -> np.ndarray:
    """Arithmetic mean of co-located per-element values; returns one value
    per global node. `elem_vals` has shape (n_elem, nloc, m)."""
    ne, nloc = mesh.elements.shape
    elem_vals = np.asarray(elem_vals, dtype=float).reshape(ne, nloc, -1)
    m = elem_vals.shape[2]
    acc = np.zeros((mesh.n_nodes, m))
    np.add.at(acc, mesh.elements.ravel(), elem_vals.reshape(ne * nloc, m))
    return acc / mesh.node_multiplicity[:, None]


def average_duplicate_dofs(mesh: ReferenceMesh, qh: np.ndarray,
                           parameter=None) -> MeshMapping:
    """Collapse a per-element (discontinuous) map q_h of shape
    (n_elem, nloc, 2) to a single-valued MeshMapping by averaging duplicated
    degrees of freedom."""
    return MeshMapping(mesh, average_duplicates(mesh, qh), parameter)


def mapping_jacobian(mapping: MeshMapping):
    """Gradient of the map and its determinant at all volume quadrature
    points: (grad_phi (n_elem, nq, 2, 2), det (n_elem, nq))."""
    mesh = mapping.mesh
    Jref, detref = mesh.geometry_jacobians()
    Jphi, detphi = mesh.geometry_jacobians(mapping.phi)
    inv = np.empty_like(Jref)
    inv[..., 0, 0] = Jref[..., 1, 1] / detref
    inv[..., 0, 1] = -Jref[..., 0, 1] / detref
    inv[..., 1, 0] = -Jref[..., 1, 0] / detref
    inv[..., 1, 1] = Jref[..., 0, 0] / detref
    grad = np.einsum("eqdr,eqrs->eqds", Jphi, inv)
    return grad, detphi / detref


def snap_corners(mapping: MeshMapping, corners: np.ndarray | None = None,
                 radius: float | None = None) -> MeshMapping:
    """Move, for each corner, the nearest mapped boundary node (within
    `radius`) exactly onto the corner. Defaults: the mesh's own corner list
    and twice the mean edge length."""
    mesh = mapping.mesh
    if corners is None:
        corners = mesh.corners
    if radius is None:
        radius = 2.0 * mesh.mean_edge_length
    phi = mapping.phi.copy()
    bids = mesh.boundary_nodes[:, 0]
    for corner in np.atleast_2d(corners):
        d = np.hypot(*(phi[bids] - corner).T)
        k = int(np.argmin(d))
        if d[k] > radius:
            log.warning("no mapped boundary node within %.3g of corner %s "
                        "(nearest at %.3g); corner left unsnapped",
                        radius, corner, d[k])
            continue
        phi[bids[k]] = corner
    snapped = MeshMapping(mesh, phi, mapping.parameter)
    if snapped.min_jacobian() <= 0.0:
        raise TanglingError("corner snapping produced a tangled mesh")
    return snapped
