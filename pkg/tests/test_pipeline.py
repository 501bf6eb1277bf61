"""Configuration handling, parameter spacing, stage tagging, and the CLI
surface (fast paths only; full chains are exercised by the acceptance
suite)."""
import numpy as np
import pytest

from adaptrom import cli, fom, pipeline
from adaptrom.pipeline import CaseConfig, PipelineError


def test_config_ini_roundtrip(tmp_path):
    cfg = CaseConfig(resolution=(8, 12), fom_safety=6.0,
                     train_parameters=(2.0, 2.5, 3.0),
                     output_dir=str(tmp_path))
    path = tmp_path / "case.ini"
    path.write_text(cfg.to_text())
    assert CaseConfig.from_file(path) == cfg


def test_config_hash_ignores_output_dir_only():
    a = CaseConfig(output_dir="x")
    b = CaseConfig(output_dir="y")
    c = CaseConfig(output_dir="x", poly_order=3)
    assert a.hash() == b.hash()
    assert a.hash() != c.hash()


def test_config_validation():
    with pytest.raises(ValueError):
        CaseConfig(train_parameters=(3.0, 2.0))
    with pytest.raises(ValueError):
        CaseConfig(train_parameters=(2.0, 2.0))
    with pytest.raises(ValueError):
        CaseConfig(fom_tol=0.0)


def test_test_parameters_between():
    out = pipeline.test_parameters_between((2.0, 3.0, 4.0), 1)
    assert out == (2.5, 3.5)
    out = pipeline.test_parameters_between((0.0, 1.0), 3)
    assert np.allclose(out, [0.25, 0.5, 0.75])


def test_flow_params_scale_with_mach():
    cfg = CaseConfig()
    mesh, _ = pipeline.case_meshes(cfg)
    p2 = pipeline.flow_params(cfg, mesh, 2.0)
    p4 = pipeline.flow_params(cfg, mesh, 4.0)
    assert p4.lambda1 == pytest.approx(2.0 * p2.lambda1)
    assert p2.lambda1_floor == cfg.lambda1_floor


def test_case_meshes_cached_and_distinct():
    cfg = CaseConfig()
    m1, a1 = pipeline.case_meshes(cfg)
    m2, a2 = pipeline.case_meshes(cfg)
    assert m1 is m2 and a1 is a2
    assert a1.poly_order == cfg.ma_order
    assert a1.n_elements > m1.n_elements


def test_adapt_aborts_at_transport_stage(tmp_path, monkeypatch):
    # with the transport iteration budget forced to zero the run must fail
    # with the transport stage tag, after the upstream stages succeeded
    cfg = CaseConfig(output_dir=str(tmp_path), ma_max_iter=0)
    mesh, _ = pipeline.case_meshes(cfg)
    state = fom.FlowState.uniform(mesh, 2.0)
    av = fom.update_viscosity(state, fom.default_params(mesh))
    fake = fom.SolveResult(state, av, True, [0.0],
                           pipeline.flow_params(cfg, mesh, 2.0))
    monkeypatch.setattr(pipeline, "solve_reference", lambda mu, c: fake)
    with pytest.raises(PipelineError) as exc:
        pipeline.adapt_and_solve(2.0, cfg)
    assert exc.value.stage == "transport-solve"


def test_solution_scale_matches_free_stream():
    from adaptrom import euler
    cfg = CaseConfig()
    s = pipeline.solution_scale(cfg)
    u = euler.free_stream(3.0, cfg.gamma)   # middle of the training range
    assert s.shape == (4,)
    assert np.allclose(s, np.maximum(np.abs(u), 1.0))


def test_cli_mesh_subcommand(tmp_path, capsys):
    cfg = CaseConfig(output_dir=str(tmp_path))
    path = tmp_path / "case.ini"
    path.write_text(cfg.to_text())
    assert cli.main(["mesh", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert "reference mesh" in out
    assert (tmp_path / f"cylinder-{cfg.hash()}" / "mesh.bin").exists()


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit):
        cli.main([])


def test_cli_reports_stage_tag_on_failure(tmp_path, capsys, monkeypatch):
    cfg = CaseConfig(output_dir=str(tmp_path), ma_max_iter=0)
    path = tmp_path / "case.ini"
    path.write_text(cfg.to_text())

    def boom(mu, c):
        raise PipelineError("transport-solve", "forced")

    monkeypatch.setattr(pipeline, "adapt_and_solve",
                        lambda mu, c, reuse=True: boom(mu, c))
    rc = cli.main(["adapt", "--config", str(path), "--mu", "2.0"])
    assert rc == 2
    assert "transport-solve" in capsys.readouterr().err
