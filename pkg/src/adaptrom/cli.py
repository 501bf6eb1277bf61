"""Command-line interface.

Subcommands: mesh (build and persist case meshes), solve (reference
solve only), adapt (full per-parameter chain), train (training sweep plus
surrogate fit), eval (test-set error table), report (CSV/SVG exports).
All subcommands take --config; failures exit nonzero and print the stage
tag of the step that failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline, report, rom
from .mesh import write_mesh
from .pipeline import CaseConfig, PipelineError


def _load_config(args) -> CaseConfig:
    cfg = CaseConfig.from_file(args.config) if args.config else CaseConfig()
    if getattr(args, "out", None):
        cfg = CaseConfig(**{**cfg.to_dict(), "output_dir": args.out})
    return cfg


def _models_dir(cfg: CaseConfig) -> Path:
    return Path(cfg.output_dir) / f"{cfg.case}-{cfg.hash()}"


def cmd_mesh(args) -> int:
    cfg = _load_config(args)
    mesh, ma_mesh = pipeline.case_meshes(cfg)
    out = _models_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_mesh(mesh, out / "mesh.bin")
    write_mesh(ma_mesh, out / "adapt-mesh.bin")
    print(f"reference mesh: {mesh.n_elements} elements, {mesh.n_nodes} nodes "
          f"(order {mesh.poly_order}) -> {out / 'mesh.bin'}")
    print(f"adaptation mesh: {ma_mesh.n_elements} elements, "
          f"{ma_mesh.n_nodes} nodes (order {ma_mesh.poly_order}) "
          f"-> {out / 'adapt-mesh.bin'}")
    return 0


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    result = pipeline.solve_reference(args.mu, cfg)
    if not result.converged:
        raise PipelineError("reference-solve", result.message)
    print(f"mu={args.mu}: converged, final residual "
          f"{result.residuals[-1]:.3e}, lambda1={result.params.lambda1:.4g}, "
          f"lambda2={result.params.lambda2:.4g}")
    return 0


def cmd_adapt(args) -> int:
    cfg = _load_config(args)
    rec = pipeline.adapt_and_solve(args.mu, cfg, reuse=not args.force)
    t = rec.meta["transport"]
    print(f"mu={args.mu}: artifacts in {rec.directory}")
    print(f"  equidistribution residual {t['equidistribution']:.3e}, "
          f"min Jacobian {t['min_jacobian']:.3f}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    pipeline.train_models(cfg, reuse=not args.force)
    out = _models_dir(cfg)
    print(f"models written to {out}:")
    for tag in ("mapped", "mapping", "fixed"):
        print(f"  model-{tag}.bin")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    models = pipeline.train_models(cfg, reuse=not args.force)
    table = pipeline.run_evaluation(cfg, models, reuse=not args.force)
    print(pipeline.format_error_table(table))
    (_models_dir(cfg) / "errors.json").write_text(
        json.dumps(table, sort_keys=True, indent=1))
    return 0


def cmd_report(args) -> int:
    cfg = _load_config(args)
    models = pipeline.train_models(cfg, reuse=not args.force)
    out = _models_dir(cfg) / "report"
    out.mkdir(parents=True, exist_ok=True)
    mesh, _ = pipeline.case_meshes(cfg)
    written = []
    written += report.export_singular_values(
        out, cfg.case, {"mapped-solution": models.basis_u,
                        "mapping": models.basis_phi,
                        "fixed-mesh-solution": models.basis_fix})
    mus = [args.mu] if args.mu is not None else list(cfg.train_parameters)
    for mu in mus:
        rec = pipeline.adapt_and_solve(mu, cfg, reuse=not args.force)
        ut = rec.load_field("ut", mesh)
        phi = rec.load_field("phi", mesh)
        u0 = rec.load_field("u0", mesh)
        spec = report.SliceSpec("stagnation-line")
        written += report.export_slice(out, cfg.case, mu, ut, spec,
                                       coords=phi.values, label="mapped")
        written += report.export_slice(out, cfg.case, mu, u0, spec,
                                       label="fixed")
        written += report.export_wall_quantity(out, cfg.case, mu, ut,
                                               coords=phi.values,
                                               gamma=cfg.gamma)
    for p in written:
        print(p)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="adaptrom",
        description="Adaptive mesh mapping and reduced-order modeling for "
                    "parametrized compressible flows.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_mu in (("mesh", cmd_mesh, False),
                               ("solve", cmd_solve, True),
                               ("adapt", cmd_adapt, True),
                               ("train", cmd_train, False),
                               ("eval", cmd_eval, False),
                               ("report", cmd_report, False)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="case configuration file (INI)")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--force", action="store_true",
                       help="recompute even if artifacts exist")
        if needs_mu:
            p.add_argument("--mu", type=float, required=True,
                           help="parameter (free-stream Mach number)")
        elif name == "report":
            p.add_argument("--mu", type=float, default=None,
                           help="restrict exports to one parameter")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, rom.RomError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
