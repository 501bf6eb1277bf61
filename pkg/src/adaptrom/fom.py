"""Steady 2D compressible Euler solver with adaptive artificial viscosity.

Discretization: nodal discontinuous Galerkin on quadrilateral elements with
a local Lax-Friedrichs interface flux; the shock-capturing term
-lambda1 * div(mu(eta) grad u) is discretized with a symmetric interior
penalty. The sensor eta is the Helmholtz-smoothed clipped dilatation
(monitor module) and mu(eta) = eta. The nonlinear system is solved by
pseudo-transient continuation with damped Newton steps; lambda1/lambda2 are
ramped down by `continuation_solve` until a regularity trigger fires.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import euler
from .euler import InvalidStateError
from .fem import SolveError, _face_param_derivs
from .fields import FieldOnMesh
from .mapping import average_duplicates
from .mesh import MeshError, ReferenceMesh
from .monitor import SensorConfig, dilatation_sensor, helmholtz_smooth, smooth_clip

log = logging.getLogger(__name__)

IP_PENALTY = 4.0          # interior-penalty constant, scaled by (p+1)^2 / h
MAX_HALVINGS = 20


@dataclass
class FlowState:
    """Conserved flow variables (rho, rho v1, rho v2, rho E) on mesh nodes.

    `elem_values`, when present, carries the element-local (discontinuous)
    coefficients of the same solution; the nodal values are their
    duplicate-DOF average.
    """

    conserved: FieldOnMesh
    mach_inf: float
    gamma: float = euler.GAMMA_DEFAULT
    elem_values: np.ndarray | None = None

    def __post_init__(self):
        if self.conserved.n_components != 4:
            raise InvalidStateError("flow state needs 4 conserved components")
        if not euler.is_physical(self.conserved.values, self.gamma):
            raise InvalidStateError("nonpositive density or pressure at a node")

    @property
    def mesh(self) -> ReferenceMesh:
        return self.conserved.mesh

    def density(self) -> np.ndarray:
        return self.conserved.values[:, 0]

    def velocity(self) -> np.ndarray:
        return self.conserved.values[:, 1:3] / self.conserved.values[:, [0]]

    def pressure(self) -> np.ndarray:
        return euler.pressure(self.conserved.values, self.gamma)

    def mach(self) -> np.ndarray:
        c = euler.sound_speed(self.conserved.values, self.gamma)
        return np.hypot(*self.velocity().T) / c

    @classmethod
    def uniform(cls, mesh: ReferenceMesh, mach: float,
                gamma: float = euler.GAMMA_DEFAULT) -> "FlowState":
        u = euler.free_stream(mach, gamma)
        vals = np.tile(u, (mesh.n_nodes, 1))
        ev = np.tile(u, (mesh.n_elements, mesh.elements.shape[1], 1))
        return cls(FieldOnMesh(mesh, vals), mach, gamma, ev)


@dataclass
class AvField:
    """Smoothed shock sensor eta and the viscosity mu(eta) = eta."""

    eta: FieldOnMesh
    mu_of_eta: FieldOnMesh

    def total(self) -> float:
        from .fields import quadrature_integrate
        return float(quadrature_integrate(self.eta)[0])


@dataclass
class RegParams:
    """Artificial-viscosity magnitude/width parameters and ramp settings."""

    lambda1: float
    lambda2: float = 2.0
    ell: float = 0.1
    ramp_factor: float = 0.5
    lambda1_floor: float = 1e-3
    lambda2_floor: float = 1e-3

    def __post_init__(self):
        vals = (self.lambda1, self.lambda2, self.ell,
                self.lambda1_floor, self.lambda2_floor)
        if any(v <= 0 for v in vals) or not 0 < self.ramp_factor <= 1:
            raise ValueError("regularization parameters must be positive, "
                             "ramp_factor in (0, 1]")

    def ramped(self) -> "RegParams":
        return RegParams(max(self.lambda1 * self.ramp_factor, self.lambda1_floor),
                         max(self.lambda2 * self.ramp_factor, self.lambda2_floor),
                         self.ell, self.ramp_factor,
                         self.lambda1_floor, self.lambda2_floor)

    def at_floor(self) -> bool:
        return (self.lambda1 <= self.lambda1_floor
                and self.lambda2 <= self.lambda2_floor)


def default_params(mesh: ReferenceMesh, safety: float = 1.0) -> RegParams:
    """Initial regularization: lambda1 from a cell-Peclet-2 estimate at unit
    free-stream speed, lambda2 = 2, smoothing length = the mean edge."""
    h = mesh.mean_edge_length
    return RegParams(lambda1=safety * 0.5 * h, lambda2=2.0, ell=h)


# ---------------------------------------------------------------------------
# boundary conditions (ghost states)
# ---------------------------------------------------------------------------

def make_bc(mesh: ReferenceMesh, mach: float, gamma: float = euler.GAMMA_DEFAULT,
            overrides: dict | None = None) -> dict:
    """Per-segment-index boundary treatment.

    Segment names map to ghost-state rules: wall/symmetry reflect the normal
    velocity, inflow prescribes the free stream, outflow extrapolates.
    `overrides` maps a segment name to a conserved state to prescribe
    instead (used e.g. to pin a subsonic outflow to a known downstream
    state).
    """
    overrides = overrides or {}
    u_inf = euler.free_stream(mach, gamma)
    bc = {}
    for idx, seg in enumerate(mesh.segments):
        if seg.name in overrides:
            bc[idx] = ("dirichlet", np.asarray(overrides[seg.name], dtype=float))
        elif seg.name in ("wall", "symmetry"):
            bc[idx] = ("wall", None)
        elif seg.name == "inflow":
            bc[idx] = ("dirichlet", u_inf)
        elif seg.name == "outflow":
            bc[idx] = ("outflow", None)
        else:
            raise MeshError(f"no boundary treatment for segment {seg.name!r}")
    return bc


def _ghost_state(kind, data, u_in, normals):
    """Exterior trace for the interface flux; also returns d(ghost)/d(u_in)
    as (nfq, 4, 4)."""
    nfq = len(u_in)
    if kind == "dirichlet":
        ug = np.broadcast_to(data, (nfq, 4)).copy()
        return ug, np.zeros((nfq, 4, 4))
    if kind == "outflow":
        T = np.broadcast_to(np.eye(4), (nfq, 4, 4)).copy()
        return u_in.copy(), T
    if kind == "wall":
        # reflect the normal momentum component
        T = np.zeros((nfq, 4, 4))
        T[:, 0, 0] = 1.0
        T[:, 3, 3] = 1.0
        nn = np.einsum("qd,qe->qde", normals, normals)
        T[:, 1:3, 1:3] = np.eye(2) - 2.0 * nn
        ug = np.einsum("qcb,qb->qc", T, u_in)
        return ug, T
    raise ValueError(f"unknown boundary kind {kind!r}")


# ---------------------------------------------------------------------------
# discontinuous-Galerkin operators
# ---------------------------------------------------------------------------

class DGOperators:
    """Geometry, trace, and quadrature tables for one nodal configuration."""

    def __init__(self, mesh: ReferenceMesh, coords: np.ndarray | None = None):
        if mesh.elem_shape != "quad":
            raise NotImplementedError(
                "the flow solver supports quadrilateral meshes only")
        self.mesh = mesh
        self.coords = mesh.nodes if coords is None else np.asarray(coords)
        b = mesh.basis
        self.nloc = b.nloc
        self.V = b.eval(b.quad_ref)                        # (nq, nloc)
        G = b.grad(b.quad_ref)
        J, detJ = mesh.geometry_jacobians(self.coords)
        if np.min(detJ) <= 0:
            raise SolveError("nonpositive Jacobian in flow-solver assembly")
        Jinv = np.empty_like(J)
        Jinv[..., 0, 0] = J[..., 1, 1] / detJ
        Jinv[..., 0, 1] = -J[..., 0, 1] / detJ
        Jinv[..., 1, 0] = -J[..., 1, 0] / detJ
        Jinv[..., 1, 1] = J[..., 0, 0] / detJ
        self.Gphys = np.einsum("qjr,eqrd->eqjd", G, Jinv)
        self.wdetJ = mesh.quad_weights[None, :] * detJ     # (nE, nq)
        self.elem_vol = self.wdetJ.sum(axis=1)
        self.mdiag = np.einsum("eq,qj->ej", self.wdetJ, self.V)  # lumped mass
        # trace tables per local face, forward and reversed orientation
        t = b.face_quad_t
        self.nfq = len(t)
        self.trace = np.stack([b.eval(b.face_coords(f, t)) for f in range(4)])
        self.trace_rev = np.stack([b.eval(b.face_coords(f, -t)) for f in range(4)])
        self._grad_tab = np.stack([b.grad(b.face_coords(f, t)) for f in range(4)])
        self._grad_tab_rev = np.stack([b.grad(b.face_coords(f, -t)) for f in range(4)])
        self._dxidt = _face_param_derivs(b)
        self._build_faces()

    # -- face pairing -------------------------------------------------------
    def _build_faces(self):
        mesh = self.mesh
        b = mesh.basis
        owners: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for e, conn in enumerate(mesh.elements):
            for f in range(4):
                va, vb = b.face_vertices(f)
                key = (min(conn[va], conn[vb]), max(conn[va], conn[vb]))
                owners.setdefault(key, []).append((e, f))
        tagged = {(int(e), int(f)): int(s) for e, f, s in mesh.boundary_faces}
        interior, bdry = [], []
        for key, own in owners.items():
            if len(own) == 2:
                interior.append(own[0] + own[1])
            elif own[0] in tagged:
                bdry.append(own[0] + (tagged[own[0]],))
            else:
                raise MeshError(f"untagged boundary face {own[0]}")
        interior.sort()
        bdry.sort()
        self.iface = np.array(interior, dtype=np.int64).reshape(-1, 4)
        self.bface = np.array(bdry, dtype=np.int64).reshape(-1, 3)
        self.int_geom = self._face_geometry(self.iface[:, 0], self.iface[:, 1])
        self.bdy_geom = self._face_geometry(self.bface[:, 0], self.bface[:, 1])
        volL = self.elem_vol[self.iface[:, 0]]
        volR = self.elem_vol[self.iface[:, 2]]
        flen = self.int_geom["wds"].sum(axis=1)
        self.int_h = np.minimum(volL, volR) / flen
        # gradient traces for the interior-penalty viscous operator
        self.int_gradL = self._phys_grad_at_face(
            self.iface[:, 0], self.iface[:, 1], reverse=False)
        self.int_gradR = self._phys_grad_at_face(
            self.iface[:, 2], self.iface[:, 3], reverse=True)

    def _face_geometry(self, elems, faces):
        """Points, outward normals, and weighted arc lengths per face, seen
        from the first-listed (left) element."""
        nf = len(elems)
        pts = np.empty((nf, self.nfq, 2))
        nrm = np.empty((nf, self.nfq, 2))
        wds = np.empty((nf, self.nfq))
        wt = self.mesh.basis.face_quad_w
        for f in range(4):
            m = faces == f
            if not np.any(m):
                continue
            ec = self.coords[self.mesh.elements[elems[m]]]   # (k, nloc, 2)
            Vf, Gf = self.trace[f], self._grad_tab[f]
            pts[m] = np.einsum("qj,kjd->kqd", Vf, ec)
            T = np.einsum("kjd,qjr,r->kqd", ec, Gf, self._dxidt[f])
            ds = np.hypot(T[..., 0], T[..., 1])
            nrm[m] = np.stack([T[..., 1], -T[..., 0]], axis=-1) / ds[..., None]
            wds[m] = wt[None, :] * ds
        return {"points": pts, "normals": nrm, "wds": wds}

    def _phys_grad_at_face(self, elems, faces, reverse):
        """Physical basis gradients at face quadrature points (nf, nfq, nloc, 2)."""
        out = np.empty((len(elems), self.nfq, self.nloc, 2))
        tab = self._grad_tab_rev if reverse else self._grad_tab
        for f in range(4):
            m = faces == f
            if not np.any(m):
                continue
            ec = self.coords[self.mesh.elements[elems[m]]]
            Gf = tab[f]                                      # (nfq, nloc, 2)
            J = np.einsum("kjd,qjr->kqdr", ec, Gf)
            detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
            Jinv = np.empty_like(J)
            Jinv[..., 0, 0] = J[..., 1, 1] / detJ
            Jinv[..., 0, 1] = -J[..., 0, 1] / detJ
            Jinv[..., 1, 0] = -J[..., 1, 0] / detJ
            Jinv[..., 1, 1] = J[..., 0, 0] / detJ
            out[m] = np.einsum("qjr,kqrd->kqjd", Gf, Jinv)
        return out

    # -- state access -------------------------------------------------------
    def volume_states(self, U):
        return np.einsum("qj,ejc->eqc", self.V, U)

    def face_states(self, U):
        eL, fL, eR, fR = self.iface.T
        uL = np.einsum("kqj,kjc->kqc", self.trace[fL], U[eL])
        uR = np.einsum("kqj,kjc->kqc", self.trace_rev[fR], U[eR])
        return uL, uR

    def check_physical(self, U, gamma) -> bool:
        try:
            uq = self.volume_states(U)
        except FloatingPointError:
            return False
        return (euler.is_physical(U, gamma) and euler.is_physical(uq, gamma))

    # -- residual and Jacobian ----------------------------------------------
    def assemble(self, U, bc, gamma, visc_op=None, want_jacobian=False):
        """Residual (nE, nloc, 4) of the regularized weak form, optionally
        with its Jacobian in CSR format. `visc_op` is the scalar
        interior-penalty operator already scaled by lambda1."""
        mesh = self.mesh
        nE, nloc, nfq = mesh.n_elements, self.nloc, self.nfq
        R = np.zeros((nE, nloc, 4))
        rows, cols, vals = [], [], []

        def dof(e):
            # all dofs of the given elements, shape e.shape + (nloc, 4)
            return ((np.asarray(e)[..., None, None] * nloc
                     + np.arange(nloc)[:, None]) * 4 + np.arange(4))

        # volume term: -int F . grad(phi)
        uq = self.volume_states(U)
        F = euler.euler_flux(uq, gamma)
        R -= np.einsum("eq,eqjd,eqcd->ejc", self.wdetJ, self.Gphys, F)
        if want_jacobian:
            A = euler.flux_jacobian(uq, gamma)              # (nE, nq, 2, 4, 4)
            blk = -np.einsum("eq,eqid,eqdcb,qj->eicjb",
                             self.wdetJ, self.Gphys, A, self.V)
            e_idx = np.arange(nE)[:, None, None, None, None]
            i_idx = np.arange(nloc)[None, :, None, None, None]
            c_idx = np.arange(4)[None, None, :, None, None]
            j_idx = np.arange(nloc)[None, None, None, :, None]
            b_idx = np.arange(4)[None, None, None, None, :]
            rows.append(np.broadcast_to(
                (e_idx * nloc + i_idx) * 4 + c_idx, blk.shape).ravel())
            cols.append(np.broadcast_to(
                (e_idx * nloc + j_idx) * 4 + b_idx, blk.shape).ravel())
            vals.append(blk.ravel())

        # interior faces: local Lax-Friedrichs flux
        if len(self.iface):
            eL, fL, eR, fR = self.iface.T
            uL, uR = self.face_states(U)
            nrm, wds = self.int_geom["normals"], self.int_geom["wds"]
            lam = self._face_lambda(uL, uR, nrm, gamma)     # (nf,), frozen
            FL = np.einsum("kqcd,kqd->kqc", euler.euler_flux(uL, gamma), nrm)
            FR = np.einsum("kqcd,kqd->kqc", euler.euler_flux(uR, gamma), nrm)
            fhat = 0.5 * (FL + FR) - 0.5 * lam[:, None, None] * (uR - uL)
            trL = self.trace[fL]                            # (nf, nfq, nloc)
            trR = self.trace_rev[fR]
            contribL = np.einsum("kq,kqc,kqj->kjc", wds, fhat, trL)
            contribR = np.einsum("kq,kqc,kqj->kjc", wds, fhat, trR)
            np.add.at(R, eL, contribL)
            np.add.at(R, eR, -contribR)
            if want_jacobian:
                AnL = np.einsum("kqdcb,kqd->kqcb",
                                euler.flux_jacobian(uL, gamma), nrm)
                AnR = np.einsum("kqdcb,kqd->kqcb",
                                euler.flux_jacobian(uR, gamma), nrm)
                eye = np.eye(4)
                dL = 0.5 * AnL + 0.5 * lam[:, None, None, None] * eye
                dR = 0.5 * AnR - 0.5 * lam[:, None, None, None] * eye
                for test_e, test_tr, sgn in ((eL, trL, 1.0), (eR, trR, -1.0)):
                    for trial_e, trial_tr, dmat in ((eL, trL, dL), (eR, trR, dR)):
                        blk = sgn * np.einsum("kq,kqi,kqcb,kqj->kicjb",
                                              wds, test_tr, dmat, trial_tr)
                        ii = dof(test_e)                   # (nf, nloc, 4)
                        jj = dof(trial_e)
                        rows.append(np.broadcast_to(
                            ii[:, :, :, None, None], blk.shape).ravel())
                        cols.append(np.broadcast_to(
                            jj[:, None, None, :, :], blk.shape).ravel())
                        vals.append(blk.ravel())

        # boundary faces: ghost-state Lax-Friedrichs flux
        for k, (e, f, seg) in enumerate(self.bface):
            kind, data = bc[int(seg)]
            tr = self.trace[f]
            u_in = tr @ U[e]                                # (nfq, 4)
            nrm = self.bdy_geom["normals"][k]
            wds = self.bdy_geom["wds"][k]
            ug, T = _ghost_state(kind, data, u_in, nrm)
            lam = float(np.max(np.maximum(
                euler.max_wave_speed(u_in, nrm, gamma),
                euler.max_wave_speed(ug, nrm, gamma))))
            Fi = np.einsum("qcd,qd->qc", euler.euler_flux(u_in, gamma), nrm)
            Fg = np.einsum("qcd,qd->qc", euler.euler_flux(ug, gamma), nrm)
            fhat = 0.5 * (Fi + Fg) - 0.5 * lam * (ug - u_in)
            R[e] += np.einsum("q,qc,qj->jc", wds, fhat, tr)
            if want_jacobian:
                Ai = np.einsum("qdcb,qd->qcb", euler.flux_jacobian(u_in, gamma), nrm)
                Ag = np.einsum("qdcb,qd->qcb", euler.flux_jacobian(ug, gamma), nrm)
                eye = np.eye(4)
                dfull = (0.5 * Ai + 0.5 * lam * eye
                         + np.einsum("qca,qab->qcb", 0.5 * Ag - 0.5 * lam * eye, T))
                blk = np.einsum("q,qi,qcb,qj->icjb", wds, tr, dfull, tr)
                base = (int(e) * nloc + np.arange(nloc)) * 4
                ii = base[:, None] + np.arange(4)
                rows.append(np.broadcast_to(
                    ii[:, :, None, None], blk.shape).ravel())
                cols.append(np.broadcast_to(
                    ii[None, None, :, :], blk.shape).ravel())
                vals.append(blk.ravel())

        J = None
        n_dof = nE * nloc * 4
        if want_jacobian:
            J = sp.coo_matrix(
                (np.concatenate(vals),
                 (np.concatenate(rows), np.concatenate(cols))),
                shape=(n_dof, n_dof)).tocsr()
        if visc_op is not None:
            R += (visc_op @ U.reshape(-1, 4)).reshape(R.shape)
            if want_jacobian:
                J = J + sp.kron(visc_op, sp.eye(4), format="csr")
        return R, J

    @staticmethod
    def _face_lambda(uL, uR, nrm, gamma):
        lam = np.maximum(euler.max_wave_speed(uL, nrm, gamma),
                         euler.max_wave_speed(uR, nrm, gamma))
        return lam.max(axis=1)

    # -- interior-penalty viscous operator ----------------------------------
    def viscous_operator(self, mu_nodal: np.ndarray) -> sp.csr_matrix:
        """Scalar SIP discretization of u -> -div(mu grad u) on the broken
        space, as a (nE*nloc) x (nE*nloc) matrix. Boundary faces get natural
        (zero-flux) treatment."""
        mesh = self.mesh
        nE, nloc = mesh.n_elements, self.nloc
        if np.any(np.asarray(mu_nodal) < -1e-12):
            raise SolveError("negative viscosity at mesh nodes")
        mu_e = np.asarray(mu_nodal, dtype=float)[mesh.elements]  # (nE, nloc)
        # interpolation of nonnegative nodal values can undershoot between
        # nodes; clamp at the quadrature points
        mu_q = np.maximum(np.einsum("qj,ej->eq", self.V, mu_e), 0.0)
        vol = np.einsum("eq,eq,eqid,eqjd->eij", self.wdetJ, mu_q,
                        self.Gphys, self.Gphys)
        e_idx = np.arange(nE)[:, None, None]
        i_idx = np.arange(nloc)[None, :, None]
        j_idx = np.arange(nloc)[None, None, :]
        rows = [np.broadcast_to(e_idx * nloc + i_idx, vol.shape).ravel()]
        cols = [np.broadcast_to(e_idx * nloc + j_idx, vol.shape).ravel()]
        vals = [vol.ravel()]

        p = mesh.poly_order
        sigma0 = IP_PENALTY * (p + 1) ** 2
        eL, fL, eR, fR = self.iface.T
        nrm, wds = self.int_geom["normals"], self.int_geom["wds"]
        mu_fL = np.einsum("kqj,kj->kq", self.trace[fL], mu_e[eL])
        mu_fR = np.einsum("kqj,kj->kq", self.trace_rev[fR], mu_e[eR])
        mu_f = np.maximum(0.5 * (mu_fL + mu_fR), 0.0)
        active = np.nonzero(mu_f.max(axis=1) > 0.0)[0]
        for k in active:
            trL, trR = self.trace[fL[k]], self.trace_rev[fR[k]]
            GnL = np.einsum("qjd,qd->qj", self.int_gradL[k], nrm[k])
            GnR = np.einsum("qjd,qd->qj", self.int_gradR[k], nrm[k])
            w, mu = wds[k], mu_f[k]
            sig = sigma0 * mu / self.int_h[k]
            # block basis: [phi_L ; phi_R], jump = uL - uR along +n
            jump = np.concatenate([trL, -trR], axis=1)       # (nfq, 2*nloc)
            avg = 0.5 * mu[:, None] * np.concatenate([GnL, GnR], axis=1)
            A = (-np.einsum("q,qi,qj->ij", w, jump, avg)
                 - np.einsum("q,qi,qj->ij", w, avg, jump)
                 + np.einsum("q,q,qi,qj->ij", w, sig, jump, jump))
            gdof = np.concatenate([eL[k] * nloc + np.arange(nloc),
                                   eR[k] * nloc + np.arange(nloc)])
            rows.append(np.repeat(gdof, 2 * nloc))
            cols.append(np.tile(gdof, 2 * nloc))
            vals.append(A.ravel())
        n = nE * nloc
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsr()

    def boundary_flux(self, U, bc, gamma) -> dict:
        """Net numerical boundary flux of each conserved quantity, keyed by
        segment name."""
        out: dict[str, np.ndarray] = {}
        for k, (e, f, seg) in enumerate(self.bface):
            kind, data = bc[int(seg)]
            u_in = self.trace[f] @ U[e]
            nrm = self.bdy_geom["normals"][k]
            wds = self.bdy_geom["wds"][k]
            ug, _ = _ghost_state(kind, data, u_in, nrm)
            lam = float(np.max(np.maximum(
                euler.max_wave_speed(u_in, nrm, gamma),
                euler.max_wave_speed(ug, nrm, gamma))))
            Fi = np.einsum("qcd,qd->qc", euler.euler_flux(u_in, gamma), nrm)
            Fg = np.einsum("qcd,qd->qc", euler.euler_flux(ug, gamma), nrm)
            fhat = 0.5 * (Fi + Fg) - 0.5 * lam * (ug - u_in)
            name = self.mesh.segments[int(seg)].name
            out[name] = out.get(name, np.zeros(4)) + wds @ fhat
        return out


_DG_CACHE: dict[tuple[int, int], DGOperators] = {}


def get_dg(mesh: ReferenceMesh, coords: np.ndarray | None = None) -> DGOperators:
    key = (id(mesh), id(coords) if coords is not None else 0)
    ops = _DG_CACHE.get(key)
    if ops is None:
        ops = DGOperators(mesh, coords)
        _DG_CACHE[key] = ops
    return ops


# ---------------------------------------------------------------------------
# viscosity field
# ---------------------------------------------------------------------------

def update_viscosity(state: FlowState, params: RegParams,
                     config: SensorConfig | None = None,
                     coords: np.ndarray | None = None) -> AvField:
    """Sensor-driven artificial viscosity: clipped negative dilatation,
    Helmholtz-smoothed over a length lambda2 * ell with eta = 0 on walls."""
    config = config or SensorConfig()
    mesh = state.mesh
    s = dilatation_sensor(state, coords).values[:, 0]
    s_max = config.s_max_factor * float(np.max(np.abs(s)))
    speed = float(np.max(np.hypot(*state.velocity().T)))
    if s_max <= 1e-10 * max(speed / mesh.diameter, 1e-300):
        zero = FieldOnMesh(mesh, np.zeros(mesh.n_nodes))
        return AvField(zero, zero)
    clipped = smooth_clip(s, config.s_min, s_max, config.clip_sharpness)
    eta = helmholtz_smooth(FieldOnMesh(mesh, clipped),
                           params.lambda2 * params.ell,
                           bc="dirichlet-wall", coords=coords)
    vals = np.maximum(eta.values[:, 0], 0.0)
    out = FieldOnMesh(mesh, vals)
    return AvField(out, out)


def regularized_residual(state: FlowState, av: AvField, params: RegParams,
                         coords: np.ndarray | None = None,
                         bc_overrides: dict | None = None) -> np.ndarray:
    """Element-local residual of the regularized Euler system, (nE, nloc, 4)."""
    dg = get_dg(state.mesh, coords)
    bc = make_bc(state.mesh, state.mach_inf, state.gamma, bc_overrides)
    U = state.elem_values if state.elem_values is not None \
        else state.conserved.elem_values()
    visc = None
    if float(np.max(av.mu_of_eta.values)) > 0.0:
        visc = params.lambda1 * dg.viscous_operator(av.mu_of_eta.values[:, 0])
    R, _ = dg.assemble(U, bc, state.gamma, visc_op=visc)
    return R


# ---------------------------------------------------------------------------
# nonlinear solver
# ---------------------------------------------------------------------------

@dataclass
class SolveResult:
    state: FlowState
    av: AvField
    converged: bool
    residuals: list[float] = field(default_factory=list)
    params: RegParams | None = None
    message: str = ""


def _residual_scale(dg: DGOperators, mach: float, gamma: float) -> float:
    fscale = float(np.linalg.norm(euler.euler_flux(
        euler.free_stream(mach, gamma), gamma)))
    return fscale * float(np.linalg.norm(dg.mdiag)) / dg.mesh.mean_edge_length


def solve_steady(state0: FlowState, params: RegParams,
                 config: SensorConfig | None = None,
                 coords: np.ndarray | None = None,
                 bc_overrides: dict | None = None,
                 tol: float = 1e-8, max_iter: int = 80,
                 freeze_tol: float = 1e-5, dtau0: float = 1.0,
                 eta_relax: float = 0.5, stall_window: int = 6) -> SolveResult:
    """Pseudo-transient damped Newton iteration for the regularized steady
    Euler equations on the (optionally mapped) mesh.

    The viscosity field is refreshed (with under-relaxation `eta_relax`)
    from the current iterate each step. Because the Jacobian does not carry
    the sensor's dependence on the state, the refresh can limit-cycle; once
    the residual drops below `freeze_tol` or stalls for `stall_window`
    iterations, eta is frozen so the Newton tail converges on a fixed
    system.
    """
    mesh = state0.mesh
    gamma, mach = state0.gamma, state0.mach_inf
    dg = get_dg(mesh, coords)
    bc = make_bc(mesh, mach, gamma, bc_overrides)
    scale = _residual_scale(dg, mach, gamma)
    U = (state0.elem_values if state0.elem_values is not None
         else state0.conserved.elem_values()).astype(float).copy()
    mdof = np.repeat(dg.mdiag.reshape(-1), 4)

    def make_state(Ue):
        nodal = average_duplicates(mesh, Ue)
        return FlowState(FieldOnMesh(mesh, nodal), mach, gamma, Ue.copy())

    prev_eta = None

    def viscosity_for(Ue):
        nonlocal prev_eta
        av = update_viscosity(make_state(Ue), params, config, coords)
        eta = av.eta.values[:, 0]
        if prev_eta is not None:
            eta = eta_relax * eta + (1.0 - eta_relax) * prev_eta
        prev_eta = eta
        fld = FieldOnMesh(mesh, eta)
        av = AvField(fld, fld)
        op = None
        if float(np.max(eta)) > 0.0:
            op = params.lambda1 * dg.viscous_operator(eta)
        return av, op

    av, visc = viscosity_for(U)
    residuals: list[float] = []
    res0 = None
    frozen = False
    best_res = np.inf
    since_best = 0
    for it in range(max_iter):
        R, J = dg.assemble(U, bc, gamma, visc_op=visc, want_jacobian=True)
        res = float(np.linalg.norm(R)) / scale
        residuals.append(res)
        if res < tol:
            return SolveResult(make_state(U), av, True, residuals, params)
        if res < 0.8 * best_res:
            best_res, since_best = res, 0
        else:
            since_best += 1
        if not frozen and res < 1e-2 and since_best >= stall_window:
            frozen = True
        if res0 is None:
            res0 = res
        dtau = min(dtau0 * res0 / max(res, 1e-300), 1e8)
        A = (J + sp.diags(mdof / dtau)).tocsc()
        try:
            delta = spla.splu(A).solve(-R.reshape(-1)).reshape(R.shape)
        except RuntimeError as exc:
            return SolveResult(make_state(U), av, False, residuals, params,
                               message=f"linear solve failed: {exc}")
        if not np.all(np.isfinite(delta)):
            return SolveResult(make_state(U), av, False, residuals, params,
                               message="non-finite Newton step")
        # damped update: positivity first, then residual growth guard
        alpha = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            U_try = U + alpha * delta
            if dg.check_physical(U_try, gamma):
                try:
                    R_try, _ = dg.assemble(U_try, bc, gamma, visc_op=visc)
                except InvalidStateError:
                    alpha *= 0.5
                    continue
                res_try = float(np.linalg.norm(R_try)) / scale
                if res_try <= 10.0 * res or res_try < 10.0 * tol:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            return SolveResult(make_state(U), av, False, residuals, params,
                               message="step rejected after 20 halvings")
        U = U_try
        if not frozen and res < freeze_tol:
            frozen = True
        if not frozen:
            av, visc = viscosity_for(U)
    R, _ = dg.assemble(U, bc, gamma, visc_op=visc)
    residuals.append(float(np.linalg.norm(R)) / scale)
    converged = residuals[-1] < tol
    return SolveResult(make_state(U), av, converged, residuals, params,
                       message="" if converged else "max_iter reached")


def continuation_solve(state0: FlowState, params0: RegParams,
                       config: SensorConfig | None = None,
                       coords: np.ndarray | None = None,
                       bc_overrides: dict | None = None,
                       tol: float = 1e-8, max_iter: int = 80,
                       max_stages: int = 30, dtau0: float = 1.0) -> SolveResult:
    """Ramp lambda1/lambda2 down by ramp_factor after each successful solve.

    Stops at the parameter floors or at the first regularity violation
    (Newton failure, positivity loss, or nodal density overshooting 1.2x
    the post-normal-shock value) and returns the last accepted solution.
    """
    result = solve_steady(state0, params0, config, coords, bc_overrides,
                          tol=tol, max_iter=max_iter, dtau0=dtau0)
    if not result.converged:
        raise SolveError(
            f"initial solve failed ({result.message}); "
            "initial regularization too weak")
    rho_cap = np.inf
    if state0.mach_inf > 1.0:
        rho_cap = 1.2 * euler.normal_shock_ratios(state0.mach_inf,
                                                  state0.gamma)[0]
    history = [(params0.lambda1, params0.lambda2, result.av.total())]
    params = params0
    for _ in range(max_stages):
        if params.at_floor() or params.ramp_factor >= 1.0:
            break
        trial_params = params.ramped()
        try:
            trial = solve_steady(result.state, trial_params, config, coords,
                                 bc_overrides, tol=tol, max_iter=max_iter,
                                 dtau0=dtau0)
        except (InvalidStateError, SolveError) as exc:
            log.info("continuation stopped: %s", exc)
            break
        rho_max = float(np.max(trial.state.density()))
        if not trial.converged:
            log.info("continuation stopped: %s", trial.message)
            break
        if rho_max > rho_cap:
            log.info("continuation stopped: density %.3f exceeds cap %.3f",
                     rho_max, rho_cap)
            break
        result, params = trial, trial_params
        history.append((params.lambda1, params.lambda2, result.av.total()))
    result.message = "; ".join(
        f"lambda1={a:.3g} lambda2={b:.3g} int_eta={c:.3g}" for a, b, c in history)
    result.history = history
    return result
