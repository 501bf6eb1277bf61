"""Per-parameter adaptation pipeline, training/evaluation sweeps, and
artifact persistence.

A run for one parameter value executes, in order: (1) continuation solve on
the reference mesh, (2) monitor construction from the density field, (3)
the optimal-transport mesh solve on a finer high-order adaptation mesh,
(4) evaluation of the map at the reference nodes with corner snapping, (5)
interpolation of the reference solution onto the adapted nodes, and (6)
re-solve on the adapted mesh from that initial guess. Artifacts are
persisted per parameter under content-addressed names (a short hash of the
configuration) so reruns with one configuration are byte-identical.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from . import euler, fom, rom
from .fields import FieldOnMesh, read_field, write_field
from .interp import interpolate_to_points
from .mapping import MeshMapping, snap_corners
from .mesh import ReferenceMesh, build_case_mesh, write_mesh
from .monge_ampere import (BoundarySpec, MAState, equidistribution_residual,
                           solve_monge_ampere)
from .monitor import (SensorConfig, TargetDensity, helmholtz_smooth,
                      resolution_sensor)

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A stage failure; `stage` names the Algorithm step that failed."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class CaseConfig:
    """Declarative description of one study; see `default_config_text`."""

    case: str = "cylinder"
    resolution: tuple = (10, 14)
    poly_order: int = 2
    ma_resolution: tuple = (32, 44)
    ma_order: int = 3
    gamma: float = 1.4
    train_parameters: tuple = (2.0, 3.0, 4.0)
    test_parameters: tuple = (2.5, 3.5)
    # monitor
    s_min: float = 0.0
    s_max_factor: float = 0.5
    clip_sharpness: float = 10.0
    monitor_length_factor: float = 0.6      # x mean edge, sensor smoothing
    # flow solver
    fom_safety: float = 4.0                 # initial lambda1 margin at Mach 2
    lambda1_floor: float = 0.02
    lambda2_floor: float = 0.12
    ramp_factor: float = 0.5
    fom_tol: float = 1e-8
    fom_max_iter: int = 150
    fom_dtau0: float = 0.3
    adapted_full_continuation: bool = False
    # transport map
    ma_tol: float = 1e-8
    ma_max_iter: int = 400
    ma_relax: float = 0.7
    # reduction
    n_modes: int = 0                        # 0: one mode per training run
    rbf_epsilon: float = 20.0
    output_dir: str = "runs"

    def __post_init__(self):
        self.resolution = tuple(int(v) for v in self.resolution)
        self.ma_resolution = tuple(int(v) for v in self.ma_resolution)
        self.train_parameters = tuple(float(v) for v in self.train_parameters)
        self.test_parameters = tuple(float(v) for v in self.test_parameters)
        tp = self.train_parameters
        if len(set(tp)) != len(tp) or list(tp) != sorted(tp):
            raise ValueError("training parameters must be distinct and sorted")
        for name in ("fom_tol", "ma_tol", "gamma", "rbf_epsilon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dc_fields(self)}

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")     # identifies the study, not where it lives
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @classmethod
    def from_file(cls, path) -> "CaseConfig":
        cp = configparser.ConfigParser()
        with open(path) as f:
            cp.read_file(f)
        kw = {}
        sections = {"case": ["case", "resolution", "poly_order", "ma_resolution",
                             "ma_order", "gamma"],
                    "parameters": ["train_parameters", "test_parameters"],
                    "monitor": ["s_min", "s_max_factor", "clip_sharpness",
                                "monitor_length_factor"],
                    "fom": ["fom_safety", "lambda1_floor", "lambda2_floor",
                            "ramp_factor", "fom_tol", "fom_max_iter",
                            "fom_dtau0", "adapted_full_continuation"],
                    "transport": ["ma_tol", "ma_max_iter", "ma_relax"],
                    "rom": ["n_modes", "rbf_epsilon"],
                    "output": ["output_dir"]}
        defaults = cls()
        for sect, names in sections.items():
            if not cp.has_section(sect):
                continue
            for name in names:
                key = name.replace("_", "-")
                if not cp.has_option(sect, key):
                    continue
                raw = cp.get(sect, key)
                cur = getattr(defaults, name)
                if isinstance(cur, tuple):
                    kw[name] = tuple(float(v) for v in raw.split())
                elif isinstance(cur, bool):
                    kw[name] = raw.strip().lower() in ("1", "true", "yes", "on")
                elif isinstance(cur, int):
                    kw[name] = int(raw)
                elif isinstance(cur, float):
                    kw[name] = float(raw)
                else:
                    kw[name] = raw.strip()
        return cls(**kw)

    def to_text(self) -> str:
        out = io.StringIO()
        d = self.to_dict()
        layout = [("case", ["case", "resolution", "poly_order", "ma_resolution",
                            "ma_order", "gamma"]),
                  ("parameters", ["train_parameters", "test_parameters"]),
                  ("monitor", ["s_min", "s_max_factor", "clip_sharpness",
                               "monitor_length_factor"]),
                  ("fom", ["fom_safety", "lambda1_floor", "lambda2_floor",
                           "ramp_factor", "fom_tol", "fom_max_iter",
                           "fom_dtau0", "adapted_full_continuation"]),
                  ("transport", ["ma_tol", "ma_max_iter", "ma_relax"]),
                  ("rom", ["n_modes", "rbf_epsilon"]),
                  ("output", ["output_dir"])]
        for sect, names in layout:
            out.write(f"[{sect}]\n")
            for name in names:
                v = d[name]
                if isinstance(v, tuple):
                    v = " ".join(repr(x) for x in v)
                out.write(f"{name.replace('_', '-')} = {v}\n")
            out.write("\n")
        return out.getvalue()


def test_parameters_between(train: tuple, per_interval: int) -> tuple:
    """Equally spaced test parameters strictly inside each training
    interval (`per_interval` per gap)."""
    out = []
    for a, b in zip(train[:-1], train[1:]):
        out.extend(np.linspace(a, b, per_interval + 2)[1:-1].tolist())
    return tuple(out)


# ---------------------------------------------------------------------------
# meshes and per-stage operations
# ---------------------------------------------------------------------------

_MESH_CACHE: dict[tuple, ReferenceMesh] = {}


def case_meshes(config: CaseConfig) -> tuple[ReferenceMesh, ReferenceMesh]:
    """(reference mesh, adaptation mesh); cached per configuration."""
    key = (config.case, config.resolution, config.poly_order,
           config.ma_resolution, config.ma_order)
    if key not in _MESH_CACHE:
        _MESH_CACHE[key] = (
            build_case_mesh(config.case, config.resolution, config.poly_order),
            build_case_mesh(config.case, config.ma_resolution, config.ma_order))
    return _MESH_CACHE[key]


def flow_params(config: CaseConfig, mesh: ReferenceMesh, mu: float) -> fom.RegParams:
    """Initial regularization scaled with Mach so the first solve of the
    ramp is robust at every training parameter."""
    h = mesh.mean_edge_length
    return fom.RegParams(
        lambda1=config.fom_safety * 0.25 * h * max(mu, 1.0),
        lambda2=2.0, ell=h, ramp_factor=config.ramp_factor,
        lambda1_floor=config.lambda1_floor,
        lambda2_floor=config.lambda2_floor)


def sensor_config(config: CaseConfig) -> SensorConfig:
    return SensorConfig(s_min=config.s_min, s_max_factor=config.s_max_factor,
                        clip_sharpness=config.clip_sharpness)


def solve_reference(mu: float, config: CaseConfig) -> fom.SolveResult:
    """Algorithm step 1: lambda-continuation solve on the reference mesh."""
    mesh, _ = case_meshes(config)
    state0 = fom.FlowState.uniform(mesh, mu, config.gamma)
    try:
        return fom.continuation_solve(
            state0, flow_params(config, mesh, mu), sensor_config(config),
            tol=config.fom_tol, max_iter=config.fom_max_iter,
            dtau0=config.fom_dtau0)
    except Exception as exc:
        raise PipelineError("reference-solve", str(exc)) from exc


def build_density(u0: FieldOnMesh, config: CaseConfig) -> tuple[TargetDensity, FieldOnMesh]:
    """Algorithm step 2: target density on the adaptation mesh from the
    first conserved component of the reference solution."""
    mesh, ma_mesh = case_meshes(config)
    xi = FieldOnMesh(mesh, u0.values[:, 0])
    try:
        s = resolution_sensor(xi, sensor_config(config))
        ell = config.monitor_length_factor * mesh.mean_edge_length
        smooth = helmholtz_smooth(s, ell)

        def rho_fn(pts):
            return interpolate_to_points(smooth, np.atleast_2d(pts),
                                         clamp_far=True)[:, 0]

        return TargetDensity.from_callable(ma_mesh, rho_fn), smooth
    except Exception as exc:
        raise PipelineError("monitor", str(exc)) from exc


def adapt_mesh(density: TargetDensity, config: CaseConfig,
               mu: float) -> tuple[MAState, MeshMapping, float]:
    """Algorithm steps 3-4: transport solve on the adaptation mesh, map
    evaluated at the reference nodes, corners snapped."""
    mesh, ma_mesh = case_meshes(config)
    try:
        ma = solve_monge_ampere(density, BoundarySpec.from_mesh(ma_mesh),
                                tol=config.ma_tol,
                                max_iter=config.ma_max_iter,
                                relax=config.ma_relax)
    except Exception as exc:
        raise PipelineError("transport-solve", str(exc)) from exc
    if not ma.converged:
        last = ma.residual_history[-1] if ma.residual_history else np.nan
        raise PipelineError(
            "transport-solve",
            f"no convergence in {config.ma_max_iter} iterations "
            f"(residual {last:.3e})")
    equi = equidistribution_residual(ma, density)
    try:
        phi = interpolate_to_points(FieldOnMesh(ma_mesh, ma.q), mesh.nodes,
                                    clamp_far=True)
        mapping = snap_corners(MeshMapping(mesh, phi, parameter=mu))
        if mapping.min_jacobian() <= 0.0:
            raise PipelineError("map-transfer", "mapped mesh is tangled")
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError("map-transfer", str(exc)) from exc
    return ma, mapping, equi


def solve_adapted(reference: fom.FlowState, mapping: MeshMapping,
                  config: CaseConfig, mu: float) -> fom.SolveResult:
    """Algorithm steps 5-6: interpolate the reference solution onto the
    adapted nodes and re-solve there, by default directly at the
    regularization floor (the guess already carries the shock)."""
    mesh, _ = case_meshes(config)
    try:
        u_init = interpolate_to_points(reference.conserved, mapping.phi,
                                       clamp_far=True)
        state0 = fom.FlowState(FieldOnMesh(mesh, u_init), mu, config.gamma)
    except Exception as exc:
        raise PipelineError("initial-guess", str(exc)) from exc
    params = flow_params(config, mesh, mu)
    try:
        if config.adapted_full_continuation:
            return fom.continuation_solve(
                state0, params, sensor_config(config), coords=mapping.phi,
                tol=config.fom_tol, max_iter=config.fom_max_iter,
                dtau0=config.fom_dtau0)
        floor = fom.RegParams(params.lambda1_floor, params.lambda2_floor,
                              params.ell, params.ramp_factor,
                              params.lambda1_floor, params.lambda2_floor)
        result = fom.solve_steady(
            state0, floor, sensor_config(config), coords=mapping.phi,
            tol=config.fom_tol, max_iter=config.fom_max_iter,
            dtau0=config.fom_dtau0)
        if not result.converged:
            log.info("adapted floor solve failed (%s); retrying with the "
                     "full ramp", result.message)
            result = fom.continuation_solve(
                state0, params, sensor_config(config), coords=mapping.phi,
                tol=config.fom_tol, max_iter=config.fom_max_iter,
                dtau0=config.fom_dtau0)
        return result
    except Exception as exc:
        raise PipelineError("adapted-solve", str(exc)) from exc


# ---------------------------------------------------------------------------
# records and persistence
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    mu: float
    directory: Path
    files: dict
    meta: dict

    def load_field(self, name: str, mesh: ReferenceMesh) -> FieldOnMesh:
        return read_field(self.directory / self.files[name], mesh)[0]


def _mu_tag(mu: float) -> str:
    return format(float(mu), ".6g").replace(".", "p").replace("-", "m")


def run_directory(config: CaseConfig, mu: float) -> Path:
    return Path(config.output_dir) / f"{config.case}-{config.hash()}" / f"mu-{_mu_tag(mu)}"


def adapt_and_solve(mu: float, config: CaseConfig,
                    reuse: bool = True) -> RunRecord:
    """Run Algorithm steps 1-6 for one parameter and persist all artifacts.

    With `reuse`, a complete existing record for the same configuration
    hash is returned without recomputation.
    """
    mesh, ma_mesh = case_meshes(config)
    out = run_directory(config, mu)
    record_path = out / "record.json"
    if reuse and record_path.exists():
        rec = json.loads(record_path.read_text())
        return RunRecord(mu, out, rec["files"], rec["meta"])
    out.mkdir(parents=True, exist_ok=True)
    timings = {}

    t0 = time.perf_counter()
    ref = solve_reference(mu, config)
    timings["reference-solve"] = time.perf_counter() - t0
    if not ref.converged:
        raise PipelineError("reference-solve", ref.message)

    t0 = time.perf_counter()
    density, smooth = build_density(ref.state.conserved, config)
    timings["monitor"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ma, mapping, equi = adapt_mesh(density, config, mu)
    timings["transport-solve"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    adapted = solve_adapted(ref.state, mapping, config, mu)
    timings["adapted-solve"] = time.perf_counter() - t0
    if not adapted.converged:
        raise PipelineError("adapted-solve", adapted.message)

    files = {"u0": "u0.field", "rho": "rho.field", "phi": "phi.field",
             "ut": "ut.field", "ma_w": "ma_w.field", "ma_q": "ma_q.field"}
    meta = {"mu": mu, "config_hash": config.hash(),
            "gamma": config.gamma,
            "reference": {"converged": ref.converged,
                          "lambda1": ref.params.lambda1,
                          "lambda2": ref.params.lambda2,
                          "stages": getattr(ref, "history", None)},
            "transport": {"iterations": ma.iteration,
                          "residual": ma.residual_history[-1],
                          "equidistribution": equi,
                          "min_jacobian": mapping.min_jacobian(),
                          "boundary_mismatch": mapping.boundary_mismatch()},
            "adapted": {"converged": adapted.converged,
                        "iterations": len(adapted.residuals),
                        "residual": adapted.residuals[-1]}}
    base = {"mu": mu, "config": config.hash()}
    write_field(out / files["u0"], ref.state.conserved, {**base, "kind": "fixed-mesh-solution"})
    write_field(out / files["rho"], smooth, {**base, "kind": "target-density"})
    write_field(out / files["phi"], FieldOnMesh(mesh, mapping.phi), {**base, "kind": "mapping"})
    write_field(out / files["ut"], adapted.state.conserved, {**base, "kind": "mapped-solution"})
    write_field(out / files["ma_w"], FieldOnMesh(ma_mesh, ma.w), {**base, "kind": "transport-potential"})
    write_field(out / files["ma_q"], FieldOnMesh(ma_mesh, ma.q), {**base, "kind": "transport-map"})
    record_path.write_text(json.dumps({"files": files, "meta": meta},
                                      sort_keys=True, indent=1))
    (out / "run.log").write_text("".join(
        f"{k}: {v:.2f} s\n" for k, v in timings.items()))
    if not (out / "mesh.bin").exists():
        write_mesh(mesh, out / "mesh.bin")
    log.info("run mu=%g done: %s", mu,
             " ".join(f"{k}={v:.1f}s" for k, v in timings.items()))
    return RunRecord(mu, out, files, meta)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def run_training_sweep(config: CaseConfig, reuse: bool = True):
    """Run every training parameter and assemble the three snapshot sets:
    mapped solutions, mappings, and fixed-mesh solutions."""
    mesh, _ = case_meshes(config)
    records, failures = [], []
    for mu in config.train_parameters:
        try:
            records.append(adapt_and_solve(mu, config, reuse=reuse))
        except PipelineError as exc:
            failures.append((mu, str(exc)))
    if failures:
        raise PipelineError("training-sweep", "; ".join(
            f"mu={mu}: {msg}" for mu, msg in failures))
    scale = solution_scale(config)
    mapped = rom.assemble_snapshots(
        [(r.mu, r.load_field("ut", mesh)) for r in records],
        "mapped-solution", scale=scale)
    mappings = rom.assemble_snapshots(
        [(r.mu, r.load_field("phi", mesh)) for r in records], "mapping")
    fixed = rom.assemble_snapshots(
        [(r.mu, r.load_field("u0", mesh)) for r in records],
        "fixed-mesh-solution", scale=scale)
    return mapped, mappings, fixed, records


def solution_scale(config: CaseConfig) -> np.ndarray:
    """Per-component snapshot scaling: free-stream magnitudes at the middle
    training Mach number (unit entries where the free-stream value is 0)."""
    mid = 0.5 * (config.train_parameters[0] + config.train_parameters[-1])
    u = euler.free_stream(mid, config.gamma)
    return np.array([max(abs(v), 1.0) for v in u])


@dataclass
class RomModels:
    basis_u: rom.PodBasis
    surr_u: rom.RbfSurrogate
    basis_phi: rom.PodBasis
    surr_phi: rom.RbfSurrogate
    basis_fix: rom.PodBasis
    surr_fix: rom.RbfSurrogate


def train_models(config: CaseConfig, reuse: bool = True) -> RomModels:
    """Training sweep + POD/RBF fit for the mapped-solution, mapping, and
    fixed-mesh surrogates; models persisted next to the run directories."""
    mapped, mappings, fixed, _ = run_training_sweep(config, reuse=reuse)
    N = config.n_modes or mapped.n_train
    eps = config.rbf_epsilon
    out = Path(config.output_dir) / f"{config.case}-{config.hash()}"
    models = []
    for snaps, tag in ((mapped, "mapped"), (mappings, "mapping"),
                       (fixed, "fixed")):
        basis = rom.compute_pod(snaps, min(N, snaps.n_train))
        coeffs = np.array([rom.project_coefficients(basis, snaps.fields[:, k])
                           for k in range(snaps.n_train)])
        surr = rom.train_rbf(snaps.parameters, coeffs, eps)
        rom.save_model(out / f"model-{tag}.bin", basis, surr)
        models.append((basis, surr))
    return RomModels(models[0][0], models[0][1], models[1][0], models[1][1],
                     models[2][0], models[2][1])


def run_evaluation(config: CaseConfig, models: RomModels,
                   reuse: bool = True) -> dict:
    """Truth runs at every test parameter plus ROM evaluation; returns the
    error table (per-mu rows and mean/max summaries)."""
    mesh, _ = case_meshes(config)
    rows = []
    for mu in config.test_parameters:
        record = adapt_and_solve(mu, config, reuse=reuse)
        truth_ut = record.load_field("ut", mesh)
        truth_phi = record.load_field("phi", mesh)
        truth_u0 = record.load_field("u0", mesh)
        pred = rom.predict(models.surr_u, models.basis_u,
                           models.surr_phi, models.basis_phi, mu)
        u0_pred = rom.reconstruct(models.basis_fix, models.surr_fix(mu))
        rows.append({
            "mu": mu,
            "E_ut": rom.relative_error(truth_ut, pred.solution),
            "E_phi": rom.relative_error(truth_phi,
                                        FieldOnMesh(mesh, pred.mapping.phi)),
            "E_u0": rom.relative_error(truth_u0, FieldOnMesh(mesh, u0_pred)),
            "tangled": pred.tangled,
            "extrapolated": pred.extrapolated})
    table = {"rows": rows}
    for key in ("E_ut", "E_phi", "E_u0"):
        vals = [r[key] for r in rows]
        table[f"mean_{key}"] = float(np.mean(vals)) if vals else np.nan
        table[f"max_{key}"] = float(np.max(vals)) if vals else np.nan
    return table


def format_error_table(table: dict) -> str:
    lines = [f"{'mu':>6}  {'E_mapped':>10}  {'E_mapping':>10}  {'E_fixed':>10}"]
    for r in table["rows"]:
        lines.append(f"{r['mu']:6.3f}  {r['E_ut']:10.4e}  "
                     f"{r['E_phi']:10.4e}  {r['E_u0']:10.4e}")
    if table["rows"]:
        lines.append(f"{'mean':>6}  {table['mean_E_ut']:10.4e}  "
                     f"{table['mean_E_phi']:10.4e}  {table['mean_E_u0']:10.4e}")
        lines.append(f"{'max':>6}  {table['max_E_ut']:10.4e}  "
                     f"{table['max_E_phi']:10.4e}  {table['max_E_u0']:10.4e}")
    return "\n".join(lines)
