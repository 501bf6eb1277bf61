"""Nodal polynomial bases and quadrature on reference elements.

Two element shapes are supported: tensor-product quadrilaterals with
Gauss-Lobatto nodes and Gauss-Legendre quadrature, and triangles with a
lattice nodal set backed by an orthonormal Dubiner modal basis and a
collapsed-coordinate Gauss-Jacobi quadrature rule.
"""
from __future__ import annotations

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import roots_jacobi, roots_legendre, eval_jacobi


def gauss_lobatto_nodes(p: int) -> np.ndarray:
    """Return the p+1 Gauss-Lobatto points on [-1, 1]."""
    if p < 1:
        raise ValueError("polynomial order must be >= 1")
    if p == 1:
        return np.array([-1.0, 1.0])
    interior, _ = roots_jacobi(p - 1, 1.0, 1.0)
    return np.concatenate(([-1.0], np.sort(interior), [1.0]))


def gauss_legendre_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [-1, 1]."""
    x, w = roots_legendre(n)
    return x, w


class Lagrange1D:
    """1D Lagrange basis on a given node set, evaluated through a Legendre
    Vandermonde matrix for numerical stability."""

    def __init__(self, nodes: np.ndarray):
        self.nodes = np.asarray(nodes, dtype=float)
        self.p = len(nodes) - 1
        self._vinv = np.linalg.inv(npleg.legvander(self.nodes, self.p))

    def eval(self, x: np.ndarray) -> np.ndarray:
        """Values of all basis functions at x; shape (npts, p+1)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return npleg.legvander(x, self.p) @ self._vinv

    def deriv(self, x: np.ndarray) -> np.ndarray:
        """First derivatives of all basis functions at x; shape (npts, p+1)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = self.p + 1
        dP = np.zeros((len(x), n))
        for j in range(n):
            c = np.zeros(n)
            c[j] = 1.0
            dP[:, j] = npleg.legval(x, npleg.legder(c))
        return dP @ self._vinv


class QuadBasis:
    """Tensor-product nodal basis on the reference square [-1, 1]^2.

    Node ordering is lexicographic, x fastest: local node j*(p+1)+i sits at
    (x_i, y_j) with Gauss-Lobatto points x_i.
    """

    n_faces = 4
    shape = "quad"

    def __init__(self, p: int, n_quad_1d: int | None = None):
        self.p = p
        self.nodes_1d = gauss_lobatto_nodes(p)
        self._lag = Lagrange1D(self.nodes_1d)
        self.nloc = (p + 1) ** 2
        xx, yy = np.meshgrid(self.nodes_1d, self.nodes_1d)
        self.ref_nodes = np.column_stack([xx.ravel(), yy.ravel()])
        nq = n_quad_1d if n_quad_1d is not None else p + 1
        gx, gw = gauss_legendre_rule(nq)
        qx, qy = np.meshgrid(gx, gx)
        self.quad_ref = np.column_stack([qx.ravel(), qy.ravel()])
        self.quad_wts = np.outer(gw, gw).ravel()
        self.face_quad_t, self.face_quad_w = gauss_legendre_rule(nq)
        # local node index of each corner, counterclockwise
        n1 = p + 1
        self.vertex_ids = np.array([0, p, n1 * n1 - 1, n1 * p])

    def eval(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        lx = self._lag.eval(pts[:, 0])
        ly = self._lag.eval(pts[:, 1])
        return np.einsum("kj,ki->kji", ly, lx).reshape(len(pts), self.nloc)

    def grad(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        lx = self._lag.eval(pts[:, 0])
        ly = self._lag.eval(pts[:, 1])
        dx = self._lag.deriv(pts[:, 0])
        dy = self._lag.deriv(pts[:, 1])
        g = np.empty((len(pts), self.nloc, 2))
        g[:, :, 0] = np.einsum("kj,ki->kji", ly, dx).reshape(len(pts), self.nloc)
        g[:, :, 1] = np.einsum("kj,ki->kji", dy, lx).reshape(len(pts), self.nloc)
        return g

    def face_coords(self, face: int, t: np.ndarray) -> np.ndarray:
        """Reference coordinates along face `face` at parameters t in [-1,1].

        Faces are numbered counterclockwise so that a neighboring element
        traverses the shared face with the opposite orientation.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        one = np.ones_like(t)
        if face == 0:
            return np.column_stack([t, -one])
        if face == 1:
            return np.column_stack([one, t])
        if face == 2:
            return np.column_stack([-t, one])
        if face == 3:
            return np.column_stack([-one, -t])
        raise ValueError(f"quad has faces 0..3, got {face}")

    def face_vertices(self, face: int) -> tuple[int, int]:
        v = self.vertex_ids
        pairs = [(v[0], v[1]), (v[1], v[2]), (v[2], v[3]), (v[3], v[0])]
        return pairs[face]


def _dubiner_index(p: int) -> list[tuple[int, int]]:
    return [(i, j) for j in range(p + 1) for i in range(p + 1 - j)]


def _dubiner_eval(p: int, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal Dubiner basis and gradients on the unit triangle
    {(x, y): x, y >= 0, x + y <= 1}.

    Returns (values (npts, nloc), gradients (npts, nloc, 2)).
    """
    pts = np.atleast_2d(pts)
    # map to the (-1,1) bi-unit triangle, then collapsed coordinates
    r = 2.0 * pts[:, 0] - 1.0
    s = 2.0 * pts[:, 1] - 1.0
    tol = 1e-13
    denom = 1.0 - s
    a = np.where(np.abs(denom) > tol, 2.0 * (1.0 + r) / np.where(np.abs(denom) > tol, denom, 1.0) - 1.0, -1.0)
    b = s
    idx = _dubiner_index(p)
    nloc = len(idx)
    vals = np.empty((len(pts), nloc))
    grads = np.empty((len(pts), nloc, 2))
    for k, (i, j) in enumerate(idx):
        Pa = eval_jacobi(i, 0.0, 0.0, a)
        Pb = eval_jacobi(j, 2.0 * i + 1.0, 0.0, b)
        dPa = 0.5 * (i + 1) * eval_jacobi(i - 1, 1.0, 1.0, a) if i > 0 else np.zeros_like(a)
        dPb = (0.5 * (j + 2 * i + 2) * eval_jacobi(j - 1, 2.0 * i + 2.0, 1.0, b)
               if j > 0 else np.zeros_like(b))
        half_b = 0.5 * (1.0 - b)
        pow_i = half_b ** i
        pow_im1 = half_b ** (i - 1) if i > 0 else np.zeros_like(b)
        norm = np.sqrt((2 * i + 1) * (i + j + 1) / 2.0) * 2.0
        phi = norm * Pa * Pb * pow_i
        # derivatives with respect to (r, s)
        dphi_dr = norm * dPa * Pb * pow_im1 if i > 0 else np.zeros_like(a)
        if i > 0:
            dphi_ds = norm * (dPa * Pb * pow_im1 * 0.5 * (1.0 + a)
                              + Pa * (dPb * pow_i - 0.5 * i * Pb * pow_im1))
        else:
            dphi_ds = norm * Pa * dPb
        vals[:, k] = phi
        # chain rule back to the unit triangle: d/dx = 2 d/dr, d/dy = 2 d/ds
        grads[:, k, 0] = 2.0 * dphi_dr
        grads[:, k, 1] = 2.0 * dphi_ds
    return vals, grads


def _collapsed_tri_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Jacobi quadrature on the unit triangle, exact for total degree
    <= 2n - 2."""
    xa, wa = roots_legendre(n)
    xb, wb = roots_jacobi(n, 1.0, 0.0)
    A, B = np.meshgrid(xa, xb)
    x = 0.25 * (1.0 + A) * (1.0 - B)
    y = 0.5 * (1.0 + B)
    w = 0.125 * np.outer(wb, wa)
    return np.column_stack([x.ravel(), y.ravel()]), w.ravel()


class TriBasis:
    """Nodal basis on the unit reference triangle with vertices (0,0), (1,0),
    (0,1), built on an equispaced lattice through an orthonormal modal basis.
    """

    n_faces = 3
    shape = "tri"

    def __init__(self, p: int, n_quad_1d: int | None = None):
        self.p = p
        lattice = np.array([(i / p, j / p) for j in range(p + 1) for i in range(p + 1 - j)]) \
            if p > 0 else np.array([[1.0 / 3.0, 1.0 / 3.0]])
        self.ref_nodes = lattice
        self.nloc = len(lattice)
        V, _ = _dubiner_eval(p, lattice)
        self._vinv = np.linalg.inv(V)
        nq = n_quad_1d if n_quad_1d is not None else p + 2
        self.quad_ref, self.quad_wts = _collapsed_tri_rule(nq)
        self.face_quad_t, self.face_quad_w = gauss_legendre_rule(nq)
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        self.vertex_ids = np.array(
            [int(np.argmin(np.sum((lattice - v) ** 2, axis=1))) for v in verts])

    def eval(self, pts: np.ndarray) -> np.ndarray:
        V, _ = _dubiner_eval(self.p, pts)
        return V @ self._vinv

    def grad(self, pts: np.ndarray) -> np.ndarray:
        _, G = _dubiner_eval(self.p, pts)
        out = np.empty((len(np.atleast_2d(pts)), self.nloc, 2))
        out[:, :, 0] = G[:, :, 0] @ self._vinv
        out[:, :, 1] = G[:, :, 1] @ self._vinv
        return out

    def face_coords(self, face: int, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        u = 0.5 * (t + 1.0)  # [0, 1] along the face, counterclockwise
        if face == 0:
            return np.column_stack([u, np.zeros_like(u)])
        if face == 1:
            return np.column_stack([1.0 - u, u])
        if face == 2:
            return np.column_stack([np.zeros_like(u), 1.0 - u])
        raise ValueError(f"triangle has faces 0..2, got {face}")

    def face_vertices(self, face: int) -> tuple[int, int]:
        v = self.vertex_ids
        pairs = [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])]
        return pairs[face]


def make_basis(shape: str, p: int, n_quad_1d: int | None = None):
    if shape == "quad":
        return QuadBasis(p, n_quad_1d)
    if shape == "tri":
        return TriBasis(p, n_quad_1d)
    raise ValueError(f"unknown element shape {shape!r}")
