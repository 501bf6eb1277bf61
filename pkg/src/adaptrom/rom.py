"""Nonintrusive reduced-order modeling of solution and mesh-mapping fields.

Snapshots live on the reference mesh; POD is a weighted (lumped-mass) SVD;
generalized coordinates are interpolated over the parameter with
multiquadric radial basis functions; online prediction composes the two
surrogates into a (mapped solution, mesh mapping) pair.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .fields import FieldOnMesh
from .mapping import MeshMapping, mapping_jacobian
from .mesh import MeshError, ReferenceMesh

log = logging.getLogger(__name__)

SNAPSHOT_KINDS = ("mapped-solution", "mapping", "fixed-mesh-solution")
RBF_EPSILON_DEFAULT = 20.0
COND_SHIFT_AT = 1e12
COND_FAIL_AT = 1e14


class RomError(ValueError):
    pass


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

@dataclass
class SnapshotSet:
    """Columns of flattened nodal fields over a strictly increasing
    parameter list. `scale` holds the per-component divisors applied to the
    stored columns (physical = stored * scale)."""

    parameters: np.ndarray            # (n_train,)
    fields: np.ndarray                # (n_dof, n_train), scaled units
    kind: str
    weights: np.ndarray               # (n_dof,) quadrature-derived
    mesh: ReferenceMesh
    n_components: int
    scale: np.ndarray                 # (n_components,)

    @property
    def n_train(self) -> int:
        return len(self.parameters)


def _as_flat(entry, mesh, kind):
    if isinstance(entry, MeshMapping):
        vals = entry.phi
    elif isinstance(entry, FieldOnMesh):
        if entry.mesh is not mesh:
            raise MeshError("snapshot fields must share one mesh")
        vals = entry.values
    else:
        vals = np.asarray(entry, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
    if vals.shape[0] != mesh.n_nodes:
        raise MeshError("snapshot has the wrong number of nodal rows")
    return vals


def assemble_snapshots(runs, kind: str,
                       scale: np.ndarray | None = None) -> SnapshotSet:
    """Build a snapshot matrix from (parameter, field) pairs.

    Fields may be FieldOnMesh, MeshMapping (for kind 'mapping'), or raw
    (n_nodes, m) arrays. Pairs are sorted by parameter; duplicates are
    rejected. `scale` divides each component before storage.
    """
    if kind not in SNAPSHOT_KINDS:
        raise RomError(f"unknown snapshot kind {kind!r}")
    runs = list(runs)
    if not runs:
        raise RomError("need at least one snapshot")
    first = runs[0][1]
    mesh = first.mesh if isinstance(first, (FieldOnMesh, MeshMapping)) else None
    if mesh is None:
        raise RomError("first snapshot must carry a mesh")
    runs.sort(key=lambda t: float(t[0]))
    params = np.array([float(mu) for mu, _ in runs])
    if np.any(np.diff(params) <= 0):
        raise RomError("training parameters must be distinct")
    cols = [_as_flat(entry, mesh, kind) for _, entry in runs]
    m = cols[0].shape[1]
    if any(c.shape[1] != m for c in cols):
        raise RomError("snapshots disagree on component count")
    if scale is None:
        scale = np.ones(m)
    scale = np.asarray(scale, dtype=float)
    if scale.shape != (m,) or np.any(scale <= 0):
        raise RomError("scale must be positive with one entry per component")
    X = np.column_stack([(c / scale).ravel() for c in cols])
    w = np.repeat(mesh.node_weights, m)
    return SnapshotSet(params, X, kind, w, mesh, m, scale)


# ---------------------------------------------------------------------------
# proper orthogonal decomposition
# ---------------------------------------------------------------------------

@dataclass
class PodBasis:
    """Leading modes of the weighted snapshot SVD.

    Modes are orthonormal in the weighted inner product <a, b> = aᵀ diag(w) b
    (on scaled fields); all singular values are retained for reporting.
    """

    modes: np.ndarray                 # (n_dof, N)
    singular_values: np.ndarray       # (n_train,)
    N: int
    weights: np.ndarray
    mesh: ReferenceMesh
    n_components: int
    scale: np.ndarray
    kind: str


def compute_pod(snapshots: SnapshotSet, N: int) -> PodBasis:
    """Weighted POD: SVD of diag(sqrt(w)) X, with a deterministic sign
    convention (the largest-magnitude entry of each mode is positive)."""
    if not 1 <= N <= snapshots.n_train:
        raise RomError(f"need 1 <= N <= {snapshots.n_train}, got {N}")
    sw = np.sqrt(snapshots.weights)
    U, S, _ = np.linalg.svd(sw[:, None] * snapshots.fields, full_matrices=False)
    modes = U[:, :N] / sw[:, None]
    for k in range(N):
        j = int(np.argmax(np.abs(modes[:, k])))
        if modes[j, k] < 0:
            modes[:, k] = -modes[:, k]
    return PodBasis(modes, S, N, snapshots.weights, snapshots.mesh,
                    snapshots.n_components, snapshots.scale, snapshots.kind)


def project_coefficients(basis: PodBasis, field) -> np.ndarray:
    """Best-approximation coefficients alpha* = Wᵀ diag(w) x of a physical
    field (FieldOnMesh, MeshMapping, or flat/nodal array)."""
    x = _to_scaled_flat(basis, field)
    return basis.modes.T @ (basis.weights * x)


def reconstruct(basis: PodBasis, alpha: np.ndarray) -> np.ndarray:
    """Physical nodal field (n_nodes, m) from generalized coordinates."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (basis.N,):
        raise RomError(f"expected {basis.N} coefficients, got {alpha.shape}")
    flat = basis.modes @ alpha
    return flat.reshape(-1, basis.n_components) * basis.scale


def _to_scaled_flat(basis, field) -> np.ndarray:
    if isinstance(field, MeshMapping):
        vals = field.phi
    elif isinstance(field, FieldOnMesh):
        vals = field.values
    else:
        vals = np.asarray(field, dtype=float)
        if vals.ndim == 1:
            if vals.size != basis.modes.shape[0]:
                raise RomError("field length does not match the basis")
            return vals
    vals = vals.reshape(-1, basis.n_components)
    if vals.shape[0] * basis.n_components != basis.modes.shape[0]:
        raise RomError("field size does not match the basis")
    return (vals / basis.scale).ravel()


# ---------------------------------------------------------------------------
# radial-basis-function surrogate
# ---------------------------------------------------------------------------

@dataclass
class RbfSurrogate:
    """Multiquadric interpolant of generalized coordinates over the
    parameter: alpha(mu) = sum_j beta_j Psi(|mu - mu_j|)."""

    centers: np.ndarray               # (n_train,)
    beta: np.ndarray                  # (n_train, N)
    epsilon: float = RBF_EPSILON_DEFAULT
    shifted: bool = field(default=False)

    def __call__(self, mu: float) -> np.ndarray:
        r = np.abs(float(mu) - self.centers)
        return _multiquadric(r, self.epsilon) @ self.beta

    def in_hull(self, mu: float) -> bool:
        return self.centers[0] <= float(mu) <= self.centers[-1]


def _multiquadric(r, eps):
    return np.sqrt(1.0 + (eps * np.asarray(r, dtype=float)) ** 2)


def train_rbf(parameters: np.ndarray, coefficients: np.ndarray,
              epsilon: float = RBF_EPSILON_DEFAULT) -> RbfSurrogate:
    """Fit the kernel system Psi beta = alpha*, one column per mode.

    A single diagonal shift of 1e-12 * trace/n is applied (and logged) if
    the kernel matrix condition exceeds 1e12; conditioning beyond 1e14
    is an error.
    """
    mu = np.asarray(parameters, dtype=float)
    alpha = np.atleast_2d(np.asarray(coefficients, dtype=float))
    if alpha.shape[0] != len(mu):
        alpha = alpha.T
    if alpha.shape[0] != len(mu):
        raise RomError("one coefficient row per training parameter required")
    if len(np.unique(mu)) != len(mu):
        raise RomError("training parameters must be distinct")
    order = np.argsort(mu)
    mu, alpha = mu[order], alpha[order]
    A = _multiquadric(np.abs(mu[:, None] - mu[None, :]), epsilon)
    cond = np.linalg.cond(A)
    shifted = False
    if cond > COND_FAIL_AT:
        raise RomError(f"kernel matrix condition {cond:.3e} exceeds 1e14; "
                       "reduce epsilon or thin the training set")
    if cond > COND_SHIFT_AT:
        shift = 1e-12 * np.trace(A) / len(mu)
        A = A + shift * np.eye(len(mu))
        shifted = True
        log.info("kernel condition %.3e; applied diagonal shift %.3e", cond, shift)
    beta = sla.solve(A, alpha, assume_a="sym")
    return RbfSurrogate(mu, beta, float(epsilon), shifted)


# ---------------------------------------------------------------------------
# online prediction and the error metric
# ---------------------------------------------------------------------------

@dataclass
class Prediction:
    solution: FieldOnMesh             # mapped solution on the reference mesh
    mapping: MeshMapping
    extrapolated: bool
    tangled: bool
    min_jacobian: float


def predict(surrogate_u: RbfSurrogate, basis_u: PodBasis,
            surrogate_phi: RbfSurrogate, basis_phi: PodBasis,
            mu: float) -> Prediction:
    """Evaluate both surrogates at mu and compose the ROM output: the
    predicted mapped solution paired with the predicted node positions.
    Extrapolation beyond the training interval and mapping tangling are
    reported as flags, not errors."""
    mesh = basis_u.mesh
    u_vals = reconstruct(basis_u, surrogate_u(mu))
    phi_vals = reconstruct(basis_phi, surrogate_phi(mu))
    if basis_phi.n_components != 2:
        raise RomError("mapping basis must have two components")
    mapping = MeshMapping(mesh, phi_vals, parameter=float(mu))
    minj = float(np.min(mapping_jacobian(mapping)[1]))
    tangled = minj <= 0.0
    if tangled:
        log.warning("predicted mapping at mu=%.4g is tangled (min det %.3e)",
                    mu, minj)
    extrap = not (surrogate_u.in_hull(mu) and surrogate_phi.in_hull(mu))
    return Prediction(FieldOnMesh(mesh, u_vals), mapping, extrap, tangled, minj)


def relative_error(truth, approx, weights: np.ndarray | None = None) -> float:
    """Relative weighted l2 error sqrt(sum w|t - a|^2 / sum w|t|^2) over
    reference-mesh nodes."""
    tv = truth.values if isinstance(truth, FieldOnMesh) else np.asarray(truth, dtype=float)
    av = approx.values if isinstance(approx, FieldOnMesh) else np.asarray(approx, dtype=float)
    tv, av = np.atleast_2d(tv.T).T, np.atleast_2d(av.T).T
    if tv.shape != av.shape:
        raise RomError(f"shape mismatch {tv.shape} vs {av.shape}")
    if weights is None:
        if not isinstance(truth, FieldOnMesh):
            raise RomError("weights required for raw arrays")
        weights = truth.mesh.node_weights
    num = float(np.einsum("n,nm,nm->", weights, tv - av, tv - av))
    den = float(np.einsum("n,nm,nm->", weights, tv, tv))
    if den <= 0.0:
        raise RomError("zero-norm truth in relative error")
    return float(np.sqrt(num / den))


# ---------------------------------------------------------------------------
# model file: text header + little-endian binary blocks
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"adaptrom-rom 1\n"


def save_model(path, basis: PodBasis, surrogate: RbfSurrogate) -> None:
    n_dof = basis.modes.shape[0]
    hdr = {"kind": basis.kind, "N": basis.N, "epsilon": surrogate.epsilon,
           "parameters": surrogate.centers.tolist(),
           "n_dof": n_dof, "n_components": basis.n_components,
           "n_train": len(surrogate.centers),
           "n_sigma": len(basis.singular_values),
           "shifted": bool(surrogate.shifted)}
    blob = json.dumps(hdr, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        f.write(basis.weights.astype("<f8").tobytes())
        f.write(basis.scale.astype("<f8").tobytes())
        f.write(basis.modes.astype("<f8").tobytes())
        f.write(basis.singular_values.astype("<f8").tobytes())
        f.write(surrogate.beta.astype("<f8").tobytes())


def load_model(path, mesh: ReferenceMesh) -> tuple[PodBasis, RbfSurrogate]:
    with open(path, "rb") as f:
        if f.read(len(MODEL_MAGIC)) != MODEL_MAGIC:
            raise RomError(f"{path}: not a model file")
        n = int.from_bytes(f.read(8), "little")
        hdr = json.loads(f.read(n))
        nd, m, N = hdr["n_dof"], hdr["n_components"], hdr["N"]
        nt, ns = hdr["n_train"], hdr["n_sigma"]
        w = np.frombuffer(f.read(nd * 8), dtype="<f8").copy()
        scale = np.frombuffer(f.read(m * 8), dtype="<f8").copy()
        modes = np.frombuffer(f.read(nd * N * 8), dtype="<f8").reshape(nd, N).copy()
        sig = np.frombuffer(f.read(ns * 8), dtype="<f8").copy()
        beta = np.frombuffer(f.read(nt * N * 8), dtype="<f8").reshape(nt, N).copy()
    if nd != mesh.n_nodes * m:
        raise RomError("model does not match the given mesh")
    basis = PodBasis(modes, sig, N, w, mesh, m, scale, hdr["kind"])
    surr = RbfSurrogate(np.array(hdr["parameters"]), beta,
                        float(hdr["epsilon"]), bool(hdr["shifted"]))
    return basis, surr
