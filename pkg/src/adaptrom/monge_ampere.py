"""Fixed-point solver for the 2D optimal-transport (Monge-Ampere) equation.

The equation is solved in first-order form: at each iteration a linear
Poisson problem lap(w) = S(H, q) is solved with linearized boundary data
enforcing that the map q = grad w stays on the physical boundary, the
potential is recentered to zero mean, and the map and Hessian are recovered
by differentiation with duplicate-DOF averaging.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fem import CGOperators, get_cg
from .fields import FieldOnMesh
from .mesh import ReferenceMesh, Segment
from .monitor import TargetDensity

log = logging.getLogger(__name__)


class DetachedBoundaryError(RuntimeError):
    """A boundary image point left every boundary segment's extent."""


@dataclass
class MAState:
    w: np.ndarray                    # (n,)
    q: np.ndarray                    # (n, 2)
    hess: np.ndarray                 # (n, 4): H11, H12, H21, H22
    iteration: int = 0
    residual_history: list[float] = field(default_factory=list)
    converged: bool = False

    @classmethod
    def identity(cls, mesh: ReferenceMesh) -> "MAState":
        n = mesh.n_nodes
        w = 0.5 * np.einsum("nd,nd->n", mesh.nodes, mesh.nodes)
        hess = np.tile([1.0, 0.0, 0.0, 1.0], (n, 1))
        return cls(w - w.mean(), mesh.nodes.copy(), hess)

    def hess_det(self) -> np.ndarray:
        h = self.hess
        return h[:, 0] * h[:, 3] - h[:, 1] * h[:, 2]


@dataclass
class BoundarySpec:
    """Boundary description for the nonlinear Neumann condition g(q) = 0.

    `custom_data`, if given, overrides the segment machinery: it receives
    (reference points, outward normals, current images) per boundary face
    and returns the linearization (a, b) of the condition a . q = b. Used
    for manufactured-solution runs where the image boundary is not one of
    the case geometries.
    """

    segments: list[Segment]
    junctions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    extent_slack: float = 1e-9
    custom_data: object = None

    @classmethod
    def from_mesh(cls, mesh: ReferenceMesh, extent_slack: float | None = None) -> "BoundarySpec":
        slack = 1e-9 * mesh.diameter if extent_slack is None else extent_slack
        return cls(mesh.segments, mesh.corners, extent_slack=slack)

    @classmethod
    def manufactured(cls, data) -> "BoundarySpec":
        spec = cls([], np.zeros((0, 2)))
        spec.custom_data = data
        return spec


def evaluate_S(hess: np.ndarray, q: np.ndarray, density: TargetDensity,
               clamp_far: bool = True) -> np.ndarray:
    """S = sqrt(H11^2 + H22^2 + H12^2 + H21^2 + 2 f(q)); always >= sqrt(2f)."""
    hess = np.atleast_2d(hess)
    f = density.f_at(np.atleast_2d(q), clamp_far=clamp_far)
    hsq = np.einsum("nk,nk->n", hess, hess)
    return np.sqrt(hsq + 2.0 * f)


def project_boundary(q_boundary: np.ndarray, own_segments: np.ndarray,
                     boundary: BoundarySpec):
    """Select the active boundary segment per image point and linearize its
    implicit function: returns (a, b, seg_choice) with a . q = b.

    Default is the point's own segment; if the image has slid past a
    junction into another segment's extent, that segment is enforced
    instead. Images outside every segment's extent are a hard error.
    """
    pts = np.atleast_2d(q_boundary)
    n = len(pts)
    segs = boundary.segments
    slack = boundary.extent_slack
    in_ext = np.column_stack([s.in_extent(pts, slack) for s in segs])
    gabs = np.column_stack([np.abs(s.g(pts)) for s in segs])
    choice = np.asarray(own_segments, dtype=int).copy()
    own_ok = in_ext[np.arange(n), choice]
    if not np.all(own_ok):
        masked = np.where(in_ext, gabs, np.inf)
        alt = np.argmin(masked, axis=1)
        none_ok = ~np.any(in_ext, axis=1)
        if np.any(none_ok):
            k = int(np.nonzero(none_ok)[0][0])
            raise DetachedBoundaryError(
                f"boundary image {pts[k]} lies outside every segment's extent")
        switched = ~own_ok
        choice[switched] = alt[switched]
        if np.any(switched):
            log.debug("switched boundary segment for %d image point(s)",
                      int(switched.sum()))
    a = np.empty((n, 2))
    b = np.empty(n)
    for s_idx in np.unique(choice):
        mask = choice == s_idx
        seg = segs[s_idx]
        grad = seg.grad_g(pts[mask])
        gval = seg.g(pts[mask])
        a[mask] = grad
        b[mask] = np.einsum("nd,nd->n", grad, pts[mask]) - gval
    return a, b, choice


def _neumann_data(ops: CGOperators, q: np.ndarray, boundary: BoundarySpec):
    """Per boundary face: normal-derivative data implementing the linearized
    oblique condition a . grad w = b, with the tangential part lagged."""
    mesh = ops.mesh
    data = []
    for fd in ops.face_data():
        conn = mesh.elements[fd["elem"]]
        q_f = fd["trace"] @ q[conn]                     # (nfq, 2)
        nrm = fd["normals"]
        if boundary.custom_data is not None:
            a, b = boundary.custom_data(fd["points"], nrm, q_f)
        else:
            own = np.full(len(q_f), fd["segment"])
            a, b, _ = project_boundary(q_f, own, boundary)
        tan = np.column_stack([-nrm[:, 1], nrm[:, 0]])
        a_n = np.einsum("nd,nd->n", a, nrm)
        a_t = np.einsum("nd,nd->n", a, tan)
        q_t = np.einsum("nd,nd->n", q_f, tan)
        if np.any(np.abs(a_n) < 1e-12):
            raise DetachedBoundaryError(
                "boundary linearization is tangent to the boundary")
        data.append((b - a_t * q_t) / a_n)
    return data


def fixed_point_step(state: MAState, density: TargetDensity,
                     boundary: BoundarySpec, ops: CGOperators | None = None,
                     relax: float = 0.7) -> MAState:
    """One iteration of the fixed-point scheme."""
    mesh = density.mesh
    if ops is None:
        ops = get_cg(mesh)
    S = evaluate_S(state.hess, state.q, density)
    h = _neumann_data(ops, state.q, boundary)
    w_new = ops.poisson_neumann(S, h)

    def recover(w):
        qf = FieldOnMesh(mesh, w).nodal_gradient()[:, 0, :]
        hf = FieldOnMesh(mesh, qf).nodal_gradient().reshape(mesh.n_nodes, 4)
        return qf, hf

    q_new, hess_new = recover(w_new)
    resid = ops.weighted_norm(q_new - state.q) / mesh.diameter
    if state.residual_history and resid > state.residual_history[-1] and relax < 1.0:
        w_new = relax * w_new + (1.0 - relax) * state.w
        q_new, hess_new = recover(w_new)
        resid = ops.weighted_norm(q_new - state.q) / mesh.diameter
    hist = state.residual_history + [resid]
    return MAState(w_new, q_new, hess_new, state.iteration + 1, hist)


def solve_monge_ampere(density: TargetDensity, boundary: BoundarySpec,
                       tol: float = 1e-8, max_iter: int = 200,
                       initial: MAState | None = None,
                       relax: float = 0.7) -> MAState:
    """Iterate the fixed point until the map increment (relative to the
    domain diameter) drops below `tol`."""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    mesh = density.mesh
    ops = get_cg(mesh)
    state = MAState.identity(mesh) if initial is None else initial
    for _ in range(max_iter):
        state = fixed_point_step(state, density, boundary, ops, relax)
        if state.residual_history[-1] < tol:
            state.converged = True
            break
    if not state.converged:
        log.warning("Monge-Ampere fixed point hit max_iter=%d with residual %.3e",
                    max_iter, state.residual_history[-1] if state.residual_history else np.nan)
    return state


def equidistribution_residual(state: MAState, density: TargetDensity) -> float:
    """Relative violation of rho'(q) det(H) = theta in the weighted L2 norm."""
    mesh = density.mesh
    rho = density.rho_at(state.q, clamp_far=True)
    viol = rho * state.hess_det() - density.theta
    ops = get_cg(mesh)
    return ops.weighted_norm(viol) / (density.theta * np.sqrt(mesh.area))
