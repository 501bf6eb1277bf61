"""Cross-mesh interpolation: point location and high-order evaluation."""
from __future__ import annotations

import logging

import numpy as np
from scipy.spatial import cKDTree

from .fields import FieldOnMesh
from .mesh import ReferenceMesh

log = logging.getLogger(__name__)

NEWTON_MAX_ITER = 20
NEWTON_TOL = 1e-12


class OutsideDomainError(ValueError):
    pass


class _Locator:
    """Point locator for a mesh in a given nodal configuration.

    Uses a nearest-node KD-tree to propose candidate elements, then a
    vectorized inverse-map Newton iteration per candidate round.
    """

    def __init__(self, mesh: ReferenceMesh, coords: np.ndarray | None = None):
        self.mesh = mesh
        self.basis = mesh.basis
        self.coords = mesh.nodes if coords is None else np.asarray(coords)
        self.ec = self.coords[mesh.elements]
        self.tree = cKDTree(self.coords)
        n2e: list[list[int]] = [[] for _ in range(mesh.n_nodes)]
        for e, conn in enumerate(mesh.elements):
            for j in conn:
                n2e[j].append(e)
        self.max_cand = max(len(v) for v in n2e)
        self.node_elems = np.full((mesh.n_nodes, self.max_cand), -1, dtype=np.int64)
        for j, v in enumerate(n2e):
            self.node_elems[j, :len(v)] = v
        self.scale = mesh.diameter

    # -- reference-cell helpers --------------------------------------------
    def _center(self, n):
        if self.basis.shape == "quad":
            return np.zeros((n, 2))
        return np.full((n, 2), 1.0 / 3.0)

    def _clamp(self, xi):
        if self.basis.shape == "quad":
            return np.clip(xi, -1.0, 1.0)
        out = np.clip(xi, 0.0, 1.0)
        s = out[:, 0] + out[:, 1]
        over = s > 1.0
        out[over] -= ((s[over] - 1.0) / 2.0)[:, None]
        return out

    def _outsideness(self, xi):
        if self.basis.shape == "quad":
            return np.maximum(np.abs(xi).max(axis=1) - 1.0, 0.0)
        return np.maximum.reduce([
            -xi[:, 0], -xi[:, 1], xi[:, 0] + xi[:, 1] - 1.0,
            np.zeros(len(xi))]).clip(min=0.0)

    def _newton(self, elems, pts):
        """Invert the element map for each (element, point) pair."""
        xi = self._center(len(pts))
        ec = self.ec[elems]
        for _ in range(NEWTON_MAX_ITER):
            V = self.basis.eval(xi)
            G = self.basis.grad(xi)
            x = np.einsum("kj,kjd->kd", V, ec)
            J = np.einsum("kjd,kjr->kdr", ec, G)
            r = pts - x
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            det = np.where(np.abs(det) > 1e-300, det, 1.0)
            dxi = np.empty_like(r)
            dxi[:, 0] = (J[:, 1, 1] * r[:, 0] - J[:, 0, 1] * r[:, 1]) / det
            dxi[:, 1] = (-J[:, 1, 0] * r[:, 0] + J[:, 0, 0] * r[:, 1]) / det
            xi = xi + dxi
            if np.max(np.abs(r)) < NEWTON_TOL * self.scale:
                break
        V = self.basis.eval(xi)
        x = np.einsum("kj,kjd->kd", V, ec)
        resid = np.hypot(*(pts - x).T)
        return xi, resid

    def locate(self, pts: np.ndarray, tol: float = 1e-8, clamp_far: bool = False):
        """Return (element index, reference coords) per point.

        Points outside the domain by more than `tol` raise
        OutsideDomainError unless `clamp_far`, in which case they are pulled
        to the closest element (and the event is logged).
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = len(pts)
        _, nearest = self.tree.query(pts)
        cands = self.node_elems[nearest]                  # (n, max_cand)
        best_elem = np.full(n, -1, dtype=np.int64)
        best_xi = np.zeros((n, 2))
        best_score = np.full(n, np.inf)
        done = np.zeros(n, dtype=bool)
        for r in range(self.max_cand):
            todo = (~done) & (cands[:, r] >= 0)
            if not np.any(todo):
                continue
            idx = np.nonzero(todo)[0]
            xi, _ = self._newton(cands[idx, r], pts[idx])
            out = self._outsideness(xi)
            score = out
            better = score < best_score[idx]
            bi = idx[better]
            best_elem[bi] = cands[bi, r]
            best_xi[bi] = xi[better]
            best_score[bi] = score[better]
            inside = out <= 1e-10
            done[idx[inside]] = True
        bad = best_elem < 0
        if np.any(bad):
            raise OutsideDomainError("point location failed: no candidate element")
        # clamp near-boundary points and measure the physical distance
        miss = ~done
        if np.any(miss):
            idx = np.nonzero(miss)[0]
            xi = self._clamp(best_xi[idx])
            V = self.basis.eval(xi)
            x = np.einsum("kj,kjd->kd", V, self.ec[best_elem[idx]])
            dist = np.hypot(*(pts[idx] - x).T)
            far = dist > tol
            if np.any(far):
                if not clamp_far:
                    worst = float(dist.max())
                    raise OutsideDomainError(
                        f"{int(far.sum())} point(s) outside the domain by up to "
                        f"{worst:.3e} (tolerance {tol:.1e})")
                log.info("clamped %d point(s) to the boundary, max distance %.3e",
                         int(far.sum()), float(dist[far].max()))
            best_xi[idx] = xi
        return best_elem, best_xi


_LOC_CACHE: dict[tuple[int, int], _Locator] = {}


def get_locator(mesh: ReferenceMesh, coords: np.ndarray | None = None) -> _Locator:
    key = (id(mesh), id(coords) if coords is not None else 0)
    loc = _LOC_CACHE.get(key)
    if loc is None:
        loc = _Locator(mesh, coords)
        _LOC_CACHE[key] = loc
    return loc


def interpolate_to_points(field: FieldOnMesh, pts: np.ndarray,
                          coords: np.ndarray | None = None,
                          tol: float = 1e-8, clamp_far: bool = False) -> np.ndarray:
    """Evaluate a piecewise-polynomial nodal field at arbitrary points.

    `coords` selects the nodal configuration to locate in (defaults to the
    reference configuration; pass a mapping's phi for an adapted mesh).
    """
    loc = get_locator(field.mesh, coords)
    elems, xi = loc.locate(pts, tol=tol, clamp_far=clamp_far)
    V = field.mesh.basis.eval(xi)
    ev = field.elem_values()[elems]
    return np.einsum("kj,kjm->km", V, ev)
