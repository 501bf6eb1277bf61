"""Continuous-Galerkin assembly on the mesh's global nodes.

Shared by the sensor-smoothing Helmholtz solves and the Poisson step of the
transport-map fixed point. Operators are cached per nodal configuration.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import ReferenceMesh


class SolveError(RuntimeError):
    pass


class CGOperators:
    """Mass/stiffness matrices and boundary-face quadrature data."""

    def __init__(self, mesh: ReferenceMesh, coords: np.ndarray | None = None):
        self.mesh = mesh
        self.coords = mesh.nodes if coords is None else np.asarray(coords)
        b = mesh.basis
        self.V = b.eval(b.quad_ref)                       # (nq, nloc)
        G = b.grad(b.quad_ref)                            # (nq, nloc, 2)
        J, detJ = mesh.geometry_jacobians(self.coords)
        if np.min(detJ) <= 0:
            raise SolveError("nonpositive Jacobian in CG assembly")
        Jinv = np.empty_like(J)
        Jinv[..., 0, 0] = J[..., 1, 1] / detJ
        Jinv[..., 0, 1] = -J[..., 0, 1] / detJ
        Jinv[..., 1, 0] = -J[..., 1, 0] / detJ
        Jinv[..., 1, 1] = J[..., 0, 0] / detJ
        self.detJ = detJ
        self.Gphys = np.einsum("qjr,eqrd->eqjd", G, Jinv)  # (nE, nq, nloc, 2)
        w = mesh.quad_weights
        Me = np.einsum("q,qi,qj,eq->eij", w, self.V, self.V, detJ)
        Ke = np.einsum("q,eqid,eqjd,eq->eij", w, self.Gphys, self.Gphys, detJ)
        self.M = self._assemble(Me)
        self.K = self._assemble(Ke)
        self.ones_weights = np.asarray(self.M @ np.ones(mesh.n_nodes))
        self._saddle_lu = None
        self._face_data = None

    def _assemble(self, elem_mats: np.ndarray) -> sp.csr_matrix:
        conn = self.mesh.elements
        ne, nloc = conn.shape
        rows = np.repeat(conn, nloc, axis=1).ravel()
        cols = np.tile(conn, (1, nloc)).ravel()
        A = sp.coo_matrix((elem_mats.ravel(), (rows, cols)),
                          shape=(self.mesh.n_nodes,) * 2)
        return A.tocsr()

    # -- boundary faces -----------------------------------------------------
    def face_data(self):
        """Per boundary face: basis trace, physical points, outward normals,
        arc-length Jacobians, and quadrature weights."""
        if self._face_data is not None:
            return self._face_data
        mesh, b = self.mesh, self.mesh.basis
        t, wt = b.face_quad_t, b.face_quad_w
        data = []
        dxidt = _face_param_derivs(b)
        for e, f, seg in mesh.boundary_faces:
            xi = b.face_coords(f, t)
            Vf = b.eval(xi)                               # (nfq, nloc)
            Gf = b.grad(xi)
            ec = self.coords[mesh.elements[e]]
            x = Vf @ ec
            J = np.einsum("jd,qjr->qdr", ec, Gf)
            T = np.einsum("qdr,r->qd", J, dxidt[f])
            ds = np.hypot(T[:, 0], T[:, 1])
            n = np.column_stack([T[:, 1], -T[:, 0]]) / ds[:, None]
            data.append({"elem": int(e), "face": int(f), "segment": int(seg),
                         "trace": Vf, "points": x, "normals": n,
                         "wds": wt * ds})
        self._face_data = data
        return data

    # -- solvers ------------------------------------------------------------
    def helmholtz(self, source_nodal: np.ndarray, ell: float,
                  dirichlet_nodes: np.ndarray | None = None) -> np.ndarray:
        """Solve u - ell^2 lap(u) = s with natural (zero-flux) boundary
        conditions, optionally pinning u = 0 on the given nodes."""
        A = (self.M + ell ** 2 * self.K).tolil()
        rhs = self.M @ source_nodal
        if dirichlet_nodes is not None and len(dirichlet_nodes):
            for i in dirichlet_nodes:
                A.rows[i] = [i]
                A.data[i] = [1.0]
            rhs = rhs.copy()
            rhs[dirichlet_nodes] = 0.0
        u = spla.spsolve(A.tocsr(), rhs)
        if not np.all(np.isfinite(u)):
            raise SolveError("Helmholtz solve produced non-finite values")
        return u

    def poisson_neumann(self, source_nodal: np.ndarray,
                        neumann_per_face: list[np.ndarray]) -> np.ndarray:
        """Solve lap(w) = s with prescribed normal-derivative data per
        boundary face quadrature point, under the mean-zero constraint."""
        rhs = -(self.M @ source_nodal)
        for fd, h in zip(self.face_data(), neumann_per_face):
            contrib = np.einsum("q,q,qj->j", fd["wds"], h, fd["trace"])
            np.add.at(rhs, self.mesh.elements[fd["elem"]], contrib)
        if self._saddle_lu is None:
            m = self.ones_weights
            A = sp.bmat([[self.K, m[:, None]], [m[None, :], None]], format="csc")
            self._saddle_lu = spla.splu(A)
        sol = self._saddle_lu.solve(np.concatenate([rhs, [0.0]]))
        w = sol[:-1]
        if not np.all(np.isfinite(w)):
            raise SolveError("Poisson solve produced non-finite values")
        return w

    def weighted_norm(self, nodal: np.ndarray) -> float:
        """Omega-weighted L2 norm of a nodal (possibly multi-component)
        field via the consistent mass matrix."""
        v = np.atleast_2d(nodal.T)
        return float(np.sqrt(sum(row @ (self.M @ row) for row in v)))


def _face_param_derivs(basis) -> list[np.ndarray]:
    if basis.shape == "quad":
        return [np.array(v, dtype=float) for v in
                [(1, 0), (0, 1), (-1, 0), (0, -1)]]
    return [np.array(v, dtype=float) for v in
            [(0.5, 0.0), (-0.5, 0.5), (0.0, -0.5)]]


_CG_CACHE: dict[tuple[int, int], CGOperators] = {}


def get_cg(mesh: ReferenceMesh, coords: np.ndarray | None = None) -> CGOperators:
    key = (id(mesh), id(coords) if coords is not None else 0)
    ops = _CG_CACHE.get(key)
    if ops is None:
        ops = CGOperators(mesh, coords)
        _CG_CACHE[key] = ops
    return ops
