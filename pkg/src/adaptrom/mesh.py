"""High-order 2D mesh representation and the built-in case geometries.

A mesh stores globally numbered nodes plus per-element connectivity into
them; element interiors are isoparametric with the nodal basis from
:mod:`adaptrom.basis`. Boundary faces carry named segments with analytic
implicit functions g(x) used by the transport-map boundary condition.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .basis import make_basis


class MeshError(ValueError):
    pass


# ---------------------------------------------------------------------------
# boundary segments
# ---------------------------------------------------------------------------

class Segment:
    """Analytic boundary piece with implicit function g(x) = 0.

    `name` is the boundary-condition tag (wall, inflow, outflow, symmetry).
    `g` is oriented so grad g points out of the domain where meaningful.
    """

    kind = "abstract"

    def __init__(self, name: str):
        self.name = name

    def g(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_g(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def in_extent(self, pts: np.ndarray, slack: float = 0.0) -> np.ndarray:
        """Whether the projection of each point falls on this piece of the
        boundary (up to `slack` beyond the endpoints)."""
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_params(name: str, kind: str, params: dict) -> "Segment":
        cls = {"line": LineSegment, "circle": CircleSegment,
               "profile": ProfileSegment}[kind]
        return cls._build(name, params)


class LineSegment(Segment):
    """Straight boundary piece from p0 to p1; g is the signed distance to the
    supporting line, positive on the `normal` side."""

    kind = "line"

    def __init__(self, name, p0, p1, outward=None):
        super().__init__(name)
        self.p0 = np.asarray(p0, dtype=float)
        self.p1 = np.asarray(p1, dtype=float)
        d = self.p1 - self.p0
        self.length = float(np.hypot(*d))
        self.tangent = d / self.length
        n = np.array([d[1], -d[0]]) / self.length
        if outward is not None and np.dot(n, outward) < 0:
            n = -n
        self.normal = n

    def g(self, pts):
        pts = np.atleast_2d(pts)
        return (pts - self.p0) @ self.normal

    def grad_g(self, pts):
        pts = np.atleast_2d(pts)
        return np.broadcast_to(self.normal, pts.shape).copy()

    def in_extent(self, pts, slack=0.0):
        pts = np.atleast_2d(pts)
        t = (pts - self.p0) @ self.tangent
        return (t >= -slack) & (t <= self.length + slack)

    def params(self):
        return {"p0": self.p0.tolist(), "p1": self.p1.tolist(),
                "normal": self.normal.tolist()}

    @classmethod
    def _build(cls, name, params):
        seg = cls(name, params["p0"], params["p1"])
        seg.normal = np.asarray(params["normal"], dtype=float)
        return seg


class CircleSegment(Segment):
    """Circular-arc boundary piece; g = sign * (|x - c| - R)."""

    kind = "circle"

    def __init__(self, name, center, radius, theta0, theta1, sign):
        super().__init__(name)
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.theta0 = float(theta0)
        self.theta1 = float(theta1)
        self.sign = float(sign)

    def g(self, pts):
        pts = np.atleast_2d(pts)
        return self.sign * (np.hypot(*(pts - self.center).T) - self.radius)

    def grad_g(self, pts):
        pts = np.atleast_2d(pts)
        d = pts - self.center
        r = np.hypot(*d.T)
        r = np.where(r > 1e-300, r, 1.0)
        return self.sign * d / r[:, None]

    def in_extent(self, pts, slack=0.0):
        pts = np.atleast_2d(pts)
        d = pts - self.center
        th = np.arctan2(d[:, 1], d[:, 0])
        ang_slack = slack / max(self.radius, 1e-300)
        lo, hi = self.theta0 - ang_slack, self.theta1 + ang_slack
        # compare modulo 2*pi
        tt = np.mod(th - lo, 2 * np.pi)
        return tt <= (hi - lo)

    def params(self):
        return {"center": self.center.tolist(), "radius": self.radius,
                "theta0": self.theta0, "theta1": self.theta1, "sign": self.sign}

    @classmethod
    def _build(cls, name, params):
        return cls(name, params["center"], params["radius"],
                   params["theta0"], params["theta1"], params["sign"])


class ProfileSegment(Segment):
    """Boundary piece y = f(x) for a Gaussian bump profile; g = sign*(y - f(x))."""

    kind = "profile"

    def __init__(self, name, height, width, x_center, x0, x1, sign):
        super().__init__(name)
        self.height = float(height)
        self.width = float(width)
        self.x_center = float(x_center)
        self.x0 = float(x0)
        self.x1 = float(x1)
        self.sign = float(sign)

    def profile(self, x):
        return self.height * np.exp(-self.width * (x - self.x_center) ** 2)

    def profile_deriv(self, x):
        return -2.0 * self.width * (x - self.x_center) * self.profile(x)

    def g(self, pts):
        pts = np.atleast_2d(pts)
        return self.sign * (pts[:, 1] - self.profile(pts[:, 0]))

    def grad_g(self, pts):
        pts = np.atleast_2d(pts)
        out = np.empty_like(pts)
        out[:, 0] = -self.sign * self.profile_deriv(pts[:, 0])
        out[:, 1] = self.sign
        return out

    def in_extent(self, pts, slack=0.0):
        pts = np.atleast_2d(pts)
        return (pts[:, 0] >= self.x0 - slack) & (pts[:, 0] <= self.x1 + slack)

    def params(self):
        return {"height": self.height, "width": self.width,
                "x_center": self.x_center, "x0": self.x0, "x1": self.x1,
                "sign": self.sign}

    @classmethod
    def _build(cls, name, params):
        return cls(name, params["height"], params["width"], params["x_center"],
                   params["x0"], params["x1"], params["sign"])


# ---------------------------------------------------------------------------
# the mesh itself
# ---------------------------------------------------------------------------

@dataclass
class ReferenceMesh:
    """Immutable high-order mesh T_h^0 on the physical domain."""

    nodes: np.ndarray                 # (n_nodes, 2)
    elements: np.ndarray              # (n_elem, nloc) int32
    poly_order: int
    elem_shape: str                   # 'quad' | 'tri'
    boundary_faces: np.ndarray        # (n_bf, 3) int32: (elem, face, seg_idx)
    segments: list[Segment]
    corners: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    case: str = ""
    n_quad_1d: int | None = None

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int32)
        self.boundary_faces = np.ascontiguousarray(
            self.boundary_faces, dtype=np.int32).reshape(-1, 3)
        self.corners = np.ascontiguousarray(self.corners, dtype=np.float64).reshape(-1, 2)
        if np.min(self.jacobian_dets()) <= 0:
            raise MeshError("element Jacobian is not positive everywhere")

    # -- basic sizes --------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def basis(self):
        return make_basis(self.elem_shape, self.poly_order, self.n_quad_1d)

    @property
    def quad_weights(self) -> np.ndarray:
        """Reference-element quadrature weights (one shared rule)."""
        return self.basis.quad_wts

    @cached_property
    def quad_points(self) -> np.ndarray:
        """Physical quadrature points, shape (n_elem, nq, 2)."""
        V = self.basis.eval(self.basis.quad_ref)
        return np.einsum("qj,ejd->eqd", V, self.elem_coords())

    def elem_coords(self, coords: np.ndarray | None = None) -> np.ndarray:
        """Per-element node coordinates (n_elem, nloc, 2)."""
        pts = self.nodes if coords is None else coords
        return pts[self.elements]

    @cached_property
    def node_multiplicity(self) -> np.ndarray:
        m = np.zeros(self.n_nodes)
        np.add.at(m, self.elements.ravel(), 1.0)
        return m

    # -- geometry at quadrature points --------------------------------------
    def geometry_jacobians(self, coords: np.ndarray | None = None):
        """(J, detJ) at volume quadrature points for the given node coords.

        J has shape (n_elem, nq, 2, 2); detJ (n_elem, nq).
        """
        G = self.basis.grad(self.basis.quad_ref)        # (nq, nloc, 2)
        ec = self.elem_coords(coords)                   # (nE, nloc, 2)
        J = np.einsum("ejd,qjr->eqdr", ec, G)
        detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        return J, detJ

    def jacobian_dets(self, coords: np.ndarray | None = None) -> np.ndarray:
        return self.geometry_jacobians(coords)[1]

    @cached_property
    def area(self) -> float:
        _, detJ = self.geometry_jacobians()
        return float(np.einsum("q,eq->", self.quad_weights, detJ))

    @cached_property
    def diameter(self) -> float:
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    @cached_property
    def mean_edge_length(self) -> float:
        ec = self.elem_coords()
        verts = ec[:, self.basis.vertex_ids, :]
        lens = []
        nv = verts.shape[1]
        for f in range(nv):
            d = verts[:, (f + 1) % nv, :] - verts[:, f, :]
            lens.append(np.hypot(d[:, 0], d[:, 1]))
        return float(np.mean(np.concatenate(lens)))

    # -- nodal weights (lumped mass), used as ROM inner-product weights -----
    @cached_property
    def node_weights(self) -> np.ndarray:
        """Diagonal (lumped) quadrature weights per global node; sums to the
        domain area."""
        V = self.basis.eval(self.basis.quad_ref)        # (nq, nloc)
        _, detJ = self.geometry_jacobians()
        elem_w = np.einsum("q,qj,eq->ej", self.quad_weights, V, detJ)
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.elements.ravel(), elem_w.ravel())
        return w

    def segment_index(self, name: str) -> list[int]:
        return [i for i, s in enumerate(self.segments) if s.name == name]

    def boundary_faces_of(self, name: str) -> np.ndarray:
        idx = set(self.segment_index(name))
        keep = [i for i, (_, _, s) in enumerate(self.boundary_faces) if s in idx]
        return self.boundary_faces[keep]

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Global node ids lying on the boundary, with their segment index
        (one representative segment per node)."""
        seen: dict[int, int] = {}
        for e, f, s in self.boundary_faces:
            for j in self._face_node_ids(f):
                seen.setdefault(int(self.elements[e, j]), int(s))
        ids = np.array(sorted(seen), dtype=np.int64)
        segs = np.array([seen[i] for i in ids], dtype=np.int64)
        return np.column_stack([ids, segs])

    def _face_node_ids(self, face: int) -> np.ndarray:
        """Local node indices lying on a reference face."""
        b = self.basis
        rc = b.face_coords(face, np.linspace(-1, 1, self.poly_order + 1))
        d2 = np.sum((b.ref_nodes[None, :, :] - rc[:, None, :]) ** 2, axis=2)
        return np.argmin(d2, axis=1)


# ---------------------------------------------------------------------------
# structured builders
# ---------------------------------------------------------------------------

def _structured_quad_lattice(nx, ny, p, uv_to_xy):
    """Global node lattice for an nx-by-ny structured quad mesh, with
    Gauss-Lobatto spacing inside each cell; uv_to_xy maps the unit square."""
    from .basis import gauss_lobatto_nodes
    gl = 0.5 * (gauss_lobatto_nodes(p) + 1.0)
    mx, my = nx * p + 1, ny * p + 1

    def line(n_cells, m):
        t = np.empty(m)
        for c in range(n_cells):
            t[c * p:(c + 1) * p + 1] = (c + gl) / n_cells
        return t

    u = line(nx, mx)
    v = line(ny, my)
    U, V = np.meshgrid(u, v)
    nodes = uv_to_xy(U.ravel(), V.ravel())
    gid = np.arange(mx * my).reshape(my, mx)

    nloc = (p + 1) ** 2
    elems = np.empty((nx * ny, nloc), dtype=np.int32)
    for cy in range(ny):
        for cx in range(nx):
            block = gid[cy * p:cy * p + p + 1, cx * p:cx * p + p + 1]
            elems[cy * nx + cx] = block.ravel()
    return np.column_stack(nodes), elems, gid


def _structured_boundary_faces(nx, ny, seg_of_side):
    """Boundary faces for the structured quad mesh. seg_of_side maps
    'bottom'/'right'/'top'/'left' to a segment index (or a callable of the
    cell index along the side)."""
    faces = []

    def seg(side, i):
        s = seg_of_side[side]
        return s(i) if callable(s) else s

    for cx in range(nx):
        faces.append((0 * nx + cx, 0, seg("bottom", cx)))
        faces.append(((ny - 1) * nx + cx, 2, seg("top", cx)))
    for cy in range(ny):
        faces.append((cy * nx + (nx - 1), 1, seg("right", cy)))
        faces.append((cy * nx + 0, 3, seg("left", cy)))
    return np.array(faces, dtype=np.int32)


def _check_resolution(resolution):
    nx, ny = resolution
    if nx < 2 or ny < 2:
        raise MeshError(f"resolution must be >= 2 per direction, got {resolution}")
    return int(nx), int(ny)


def build_case_mesh(case: str, resolution, poly_order: int,
                    n_quad_1d: int | None = None, **kw) -> ReferenceMesh:
    """Build one of the built-in case meshes.

    Cases: 'cylinder' (half annulus around a circular body), 'bump'
    (channel with a Gaussian bump on the bottom wall), 'wedge' (double
    ramp, triangle elements), 'square' (unit square, all-wall utility
    domain), 'channel' (unit square with inflow/outflow).
    """
    if poly_order < 1:
        raise MeshError("poly_order must be >= 1")
    builders = {"cylinder": _build_cylinder, "cylinder-annulus": _build_cylinder,
                "bump": _build_bump, "bump-channel": _build_bump,
                "wedge": _build_wedge, "double-wedge": _build_wedge,
                "square": _build_square, "channel": _build_channel}
    if case not in builders:
        raise MeshError(f"unknown case {case!r}; expected one of {sorted(builders)}")
    nx, ny = _check_resolution(resolution)
    return builders[case](nx, ny, int(poly_order), n_quad_1d, **kw)


def _build_cylinder(nr, nt, p, n_quad_1d, r_inner=0.5, r_outer=2.0):
    """Left half annulus: wall on the inner circle, supersonic inflow on the
    outer circle, outflow on the two x = 0 cuts. Free stream moves in +x."""
    b0, b1 = np.pi / 2.0, 3.0 * np.pi / 2.0

    def uv_to_xy(u, v):
        r = r_inner + u * (r_outer - r_inner)
        beta = b0 + v * (b1 - b0)
        return r * np.cos(beta), r * np.sin(beta)

    nodes, elems, _ = _structured_quad_lattice(nr, nt, p, uv_to_xy)
    segments = [
        CircleSegment("wall", (0.0, 0.0), r_inner, b0, b1, sign=-1.0),
        CircleSegment("inflow", (0.0, 0.0), r_outer, b0, b1, sign=1.0),
        LineSegment("outflow", (0.0, r_inner), (0.0, r_outer), outward=(1.0, 0.0)),
        LineSegment("outflow", (0.0, -r_outer), (0.0, -r_inner), outward=(1.0, 0.0)),
    ]
    # u-direction is radial (bottom/top of the lattice are the angular cuts)
    faces = _structured_boundary_faces(
        nr, nt, {"left": 0, "right": 1, "bottom": 2, "top": 3})
    corners = np.array([[0.0, r_inner], [0.0, r_outer],
                        [0.0, -r_inner], [0.0, -r_outer]])
    return ReferenceMesh(nodes, elems, p, "quad", faces, segments, corners,
                         case="cylinder", n_quad_1d=n_quad_1d)


BUMP_LENGTH = 3.0
BUMP_HEIGHT_CH = 1.0
BUMP_AMPL = 0.04
BUMP_WIDTH = 25.0


def bump_profile(x, height=BUMP_AMPL, width=BUMP_WIDTH, x_center=BUMP_LENGTH / 2.0):
    return height * np.exp(-width * (np.asarray(x, dtype=float) - x_center) ** 2)


def _build_bump(nx, ny, p, n_quad_1d, height=BUMP_AMPL, width=BUMP_WIDTH):
    """Channel [0,3] x [0,1] with a Gaussian bump on the bottom wall."""
    L, H, xc = BUMP_LENGTH, BUMP_HEIGHT_CH, BUMP_LENGTH / 2.0

    def uv_to_xy(u, v):
        x = L * u
        yb = bump_profile(x, height, width, xc)
        return x, yb + v * (H - yb)

    nodes, elems, _ = _structured_quad_lattice(nx, ny, p, uv_to_xy)
    segments = [
        ProfileSegment("wall", height, width, xc, 0.0, L, sign=-1.0),
        LineSegment("wall", (L, H), (0.0, H), outward=(0.0, 1.0)),
        LineSegment("inflow", (0.0, H), (0.0, 0.0), outward=(-1.0, 0.0)),
        LineSegment("outflow", (L, 0.0), (L, H), outward=(1.0, 0.0)),
    ]
    faces = _structured_boundary_faces(
        nx, ny, {"bottom": 0, "top": 1, "left": 2, "right": 3})
    corners = np.array([[0.0, 0.0], [L, 0.0], [L, H], [0.0, H]])
    return ReferenceMesh(nodes, elems, p, "quad", faces, segments, corners,
                         case="bump", n_quad_1d=n_quad_1d)


WEDGE_ANGLE1 = np.deg2rad(25.0)
WEDGE_ANGLE2 = np.deg2rad(37.0)
WEDGE_X_LEAD = -0.5
WEDGE_X_KINK = 0.5
WEDGE_X_END = 1.0
WEDGE_HEIGHT = 1.2


def _wedge_floor(x):
    x = np.asarray(x, dtype=float)
    y1 = np.tan(WEDGE_ANGLE1) * np.clip(x, 0.0, WEDGE_X_KINK)
    y2 = np.tan(WEDGE_ANGLE2) * np.clip(x - WEDGE_X_KINK, 0.0, None)
    return y1 + y2


def _build_wedge(nx, ny, p, n_quad_1d):
    """Double wedge (25 and 37 degree ramps) meshed with triangles."""
    x0, x1, H = WEDGE_X_LEAD, WEDGE_X_END, WEDGE_HEIGHT
    from .basis import gauss_lobatto_nodes
    gl = 0.5 * (gauss_lobatto_nodes(p) + 1.0)

    def uv_to_xy(u, v):
        x = x0 + u * (x1 - x0)
        yb = _wedge_floor(x)
        return np.column_stack([x, yb + v * (H - yb)])

    # lattice nodes per triangle, deduplicated by rounded coordinates
    tri_nodes_uv = np.array([(i / p, j / p)
                             for j in range(p + 1) for i in range(p + 1 - j)])
    all_pts = []
    tri_cells = []
    bfaces = []
    du, dv = 1.0 / nx, 1.0 / ny
    for cy in range(ny):
        for cx in range(nx):
            u0, v0 = cx * du, cy * dv
            corn = {
                "A": (u0, v0), "B": (u0 + du, v0),
                "C": (u0 + du, v0 + dv), "D": (u0, v0 + dv)}

            def tri(a, b, c):
                a, b, c = (np.array(corn[k]) for k in (a, b, c))
                uv = (a[None, :] + np.outer(tri_nodes_uv[:, 0], b - a)
                      + np.outer(tri_nodes_uv[:, 1], c - a))
                start = sum(len(q) for q in all_pts)
                all_pts.append(uv_to_xy(uv[:, 0], uv[:, 1]))
                return start

            s1 = tri("A", "B", "C")
            s2 = tri("A", "C", "D")
            tri_cells.append(s1)
            tri_cells.append(s2)
            e1, e2 = len(tri_cells) - 2, len(tri_cells) - 1
            if cy == 0:
                # split the floor into its three analytic pieces
                xmid = x0 + (u0 + 0.5 * du) * (x1 - x0)
                seg = 0 if xmid < 0.0 else (1 if xmid < WEDGE_X_KINK else 2)
                bfaces.append((e1, 0, seg))
            if cy == ny - 1:
                bfaces.append((e2, 1, 4))      # top inflow
            if cx == 0:
                bfaces.append((e2, 2, 3))      # left inflow
            if cx == nx - 1:
                bfaces.append((e1, 1, 5))      # right outflow
    pts = np.vstack(all_pts)
    key = np.round(pts, 10)
    _, uniq_idx, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    nodes = pts[uniq_idx]
    nloc = len(tri_nodes_uv)
    elems = np.array([inv[s:s + nloc] for s in tri_cells], dtype=np.int32)

    t1, t2 = np.tan(WEDGE_ANGLE1), np.tan(WEDGE_ANGLE2)
    yk = _wedge_floor(WEDGE_X_KINK)
    ye = _wedge_floor(WEDGE_X_END)
    segments = [
        LineSegment("wall", (x0, 0.0), (0.0, 0.0), outward=(0.0, -1.0)),
        LineSegment("wall", (0.0, 0.0), (WEDGE_X_KINK, t1 * WEDGE_X_KINK),
                    outward=(t1, -1.0)),
        LineSegment("wall", (WEDGE_X_KINK, yk), (WEDGE_X_END, ye),
                    outward=(t2, -1.0)),
        LineSegment("inflow", (x0, 0.0), (x0, H), outward=(-1.0, 0.0)),
        LineSegment("inflow", (x0, H), (x1, H), outward=(0.0, 1.0)),
        LineSegment("outflow", (x1, ye), (x1, H), outward=(1.0, 0.0)),
    ]
    corners = np.array([[x0, 0.0], [0.0, 0.0], [WEDGE_X_KINK, yk],
                        [WEDGE_X_END, ye], [x1, H], [x0, H]])
    return ReferenceMesh(nodes, elems, p, "tri", np.array(bfaces, dtype=np.int32),
                         segments, corners, case="wedge", n_quad_1d=n_quad_1d)


def _rect_mesh(nx, ny, p, n_quad_1d, lx=1.0, ly=1.0, tags=("wall",) * 4, case="square",
               warp=None):
    """Rectangle [0,lx] x [0,ly]; tags in order bottom, right, top, left."""
    def uv_to_xy(u, v):
        x, y = lx * u, ly * v
        if warp is not None:
            x, y = warp(x, y)
        return x, y

    nodes, elems, _ = _structured_quad_lattice(nx, ny, p, uv_to_xy)
    segments = [
        LineSegment(tags[0], (0.0, 0.0), (lx, 0.0), outward=(0.0, -1.0)),
        LineSegment(tags[1], (lx, 0.0), (lx, ly), outward=(1.0, 0.0)),
        LineSegment(tags[2], (lx, ly), (0.0, ly), outward=(0.0, 1.0)),
        LineSegment(tags[3], (0.0, ly), (0.0, 0.0), outward=(-1.0, 0.0)),
    ]
    faces = _structured_boundary_faces(
        nx, ny, {"bottom": 0, "right": 1, "top": 2, "left": 3})
    corners = np.array([[0.0, 0.0], [lx, 0.0], [lx, ly], [0.0, ly]])
    return ReferenceMesh(nodes, elems, p, "quad", faces, segments, corners,
                         case=case, n_quad_1d=n_quad_1d)


def _build_square(nx, ny, p, n_quad_1d, lx=1.0, ly=1.0):
    return _rect_mesh(nx, ny, p, n_quad_1d, lx, ly)


def _build_channel(nx, ny, p, n_quad_1d, lx=1.0, ly=1.0):
    return _rect_mesh(nx, ny, p, n_quad_1d, lx, ly,
                      tags=("wall", "outflow", "wall", "inflow"), case="channel")


# ---------------------------------------------------------------------------
# file format: text header + little-endian binary blocks
# ---------------------------------------------------------------------------

MESH_MAGIC = b"adaptrom-mesh 1\n"


def write_mesh(mesh: ReferenceMesh, path) -> None:
    with open(path, "wb") as f:
        f.write(MESH_MAGIC)
        hdr = {"shape": mesh.elem_shape, "p": mesh.poly_order,
               "n_nodes": mesh.n_nodes, "n_elements": mesh.n_elements,
               "nloc": mesh.elements.shape[1],
               "n_boundary_faces": len(mesh.boundary_faces),
               "n_corners": len(mesh.corners), "case": mesh.case,
               "n_quad_1d": mesh.n_quad_1d,
               "segments": [{"name": s.name, "kind": s.kind, "params": s.params()}
                            for s in mesh.segments]}
        blob = json.dumps(hdr, sort_keys=True).encode()
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        f.write(mesh.nodes.astype("<f8").tobytes())
        f.write(mesh.elements.astype("<i4").tobytes())
        f.write(mesh.boundary_faces.astype("<i4").tobytes())
        f.write(mesh.corners.astype("<f8").tobytes())


def read_mesh(path) -> ReferenceMesh:
    with open(path, "rb") as f:
        if f.read(len(MESH_MAGIC)) != MESH_MAGIC:
            raise MeshError(f"{path}: not an adaptrom mesh file")
        n = int.from_bytes(f.read(8), "little")
        hdr = json.loads(f.read(n))
        nn, ne, nloc = hdr["n_nodes"], hdr["n_elements"], hdr["nloc"]
        nodes = np.frombuffer(f.read(nn * 16), dtype="<f8").reshape(nn, 2)
        elems = np.frombuffer(f.read(ne * nloc * 4), dtype="<i4").reshape(ne, nloc)
        nbf = hdr["n_boundary_faces"]
        bf = np.frombuffer(f.read(nbf * 12), dtype="<i4").reshape(nbf, 3)
        nc = hdr["n_corners"]
        corners = np.frombuffer(f.read(nc * 16), dtype="<f8").reshape(nc, 2)
    segments = [Segment.from_params(s["name"], s["kind"], s["params"])
                for s in hdr["segments"]]
    return ReferenceMesh(nodes.copy(), elems.copy(), hdr["p"], hdr["shape"],
                         bf.copy(), segments, corners.copy(), case=hdr["case"],
                         n_quad_1d=hdr["n_quad_1d"])
