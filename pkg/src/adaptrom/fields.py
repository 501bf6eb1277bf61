"""Nodal fields on a mesh, quadrature integration, and field files."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mesh import MeshError, ReferenceMesh


class TanglingError(RuntimeError):
    """Raised when a mapping has a nonpositive Jacobian determinant."""


@dataclass
class FieldOnMesh:
    """A piecewise-polynomial field given by one value per global mesh node."""

    mesh: ReferenceMesh
    values: np.ndarray          # (n_nodes, m)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.mesh.n_nodes:
            raise MeshError(
                f"field has {v.shape[0]} rows for a mesh with {self.mesh.n_nodes} nodes")
        if not np.all(np.isfinite(v)):
            raise MeshError("field values must be finite")
        self.values = v

    @property
    def n_components(self) -> int:
        return self.values.shape[1]

    def elem_values(self) -> np.ndarray:
        """Per-element nodal values, shape (n_elem, nloc, m)."""
        return self.values[self.mesh.elements]

    def at_quad(self) -> np.ndarray:
        """Field values at the volume quadrature points (n_elem, nq, m)."""
        V = self.mesh.basis.eval(self.mesh.basis.quad_ref)
        return np.einsum("qj,ejm->eqm", V, self.elem_values())

    def broken_gradient(self, coords: np.ndarray | None = None) -> np.ndarray:
        """Per-element gradient at the element nodes (n_elem, nloc, m, 2),
        computed by exact differentiation of the local polynomial.

        `coords` selects the nodal configuration to differentiate against
        (defaults to the reference configuration)."""
        b = self.mesh.basis
        G = b.grad(b.ref_nodes)                          # (nloc, nloc, 2)
        ec = self.mesh.elem_coords(coords)
        J = np.einsum("ejd,njr->endr", ec, G)            # dx/dxi at nodes
        detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        Jinv = np.empty_like(J)
        Jinv[..., 0, 0] = J[..., 1, 1] / detJ
        Jinv[..., 0, 1] = -J[..., 0, 1] / detJ
        Jinv[..., 1, 0] = -J[..., 1, 0] / detJ
        Jinv[..., 1, 1] = J[..., 0, 0] / detJ
        dref = np.einsum("njr,ejm->enmr", G, self.elem_values())
        return np.einsum("enmr,enrd->enmd", dref, Jinv)

    def nodal_gradient(self, coords: np.ndarray | None = None) -> np.ndarray:
        """Single-valued gradient per global node (n_nodes, m, 2), averaging
        the broken gradient at duplicated degrees of freedom."""
        from .mapping import average_duplicates
        g = self.broken_gradient(coords)
        ne, nloc, m, _ = g.shape
        return average_duplicates(self.mesh, g.reshape(ne, nloc, 2 * m)) \
            .reshape(self.mesh.n_nodes, m, 2)


def quadrature_integrate(field: FieldOnMesh, mapping=None) -> np.ndarray:
    """Integrate each component of `field` over the (optionally mapped)
    domain; returns shape (m,)."""
    mesh = field.mesh
    coords = None if mapping is None else mapping.phi
    _, detJ = mesh.geometry_jacobians(coords)
    if np.min(detJ) <= 0.0:
        raise TanglingError("nonpositive Jacobian determinant in quadrature")
    vals = field.at_quad()
    return np.einsum("q,eq,eqm->m", mesh.quad_weights, detJ, vals)


def integrate_values(mesh: ReferenceMesh, quad_vals: np.ndarray,
                     coords: np.ndarray | None = None) -> np.ndarray:
    """Integrate values already sampled at the volume quadrature points."""
    _, detJ = mesh.geometry_jacobians(coords)
    return np.einsum("q,eq,eq...->...", mesh.quad_weights, detJ, quad_vals)


FIELD_MAGIC = b"adaptrom-field 1\n"


def write_field(path, field: FieldOnMesh, meta: dict | None = None) -> None:
    """Persist nodal values with a small JSON header; byte-deterministic."""
    hdr = {"n_nodes": field.mesh.n_nodes, "n_components": field.n_components}
    hdr.update(meta or {})
    blob = json.dumps(hdr, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(FIELD_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        f.write(field.values.astype("<f8").tobytes())


def read_field(path, mesh: ReferenceMesh) -> tuple[FieldOnMesh, dict]:
    with open(path, "rb") as f:
        if f.read(len(FIELD_MAGIC)) != FIELD_MAGIC:
            raise MeshError(f"{path}: not a field file")
        n = int.from_bytes(f.read(8), "little")
        hdr = json.loads(f.read(n))
        nn, m = hdr["n_nodes"], hdr["n_components"]
        if nn != mesh.n_nodes:
            raise MeshError(f"{path}: field written for {nn} nodes, "
                            f"mesh has {mesh.n_nodes}")
        vals = np.frombuffer(f.read(nn * m * 8), dtype="<f8").reshape(nn, m)
    return FieldOnMesh(mesh, vals.copy()), hdr


def l2_norm(field: FieldOnMesh, mapping=None) -> float:
    """Omega-weighted L2 norm of the (possibly vector) field."""
    mesh = field.mesh
    coords = None if mapping is None else mapping.phi
    _, detJ = mesh.geometry_jacobians(coords)
    vals = field.at_quad()
    sq = np.einsum("eqm,eqm->eq", vals, vals)
    return float(np.sqrt(np.einsum("q,eq,eq->", mesh.quad_weights, detJ, sq)))
