"""CSV/SVG exporters: schema, trivial oracles, and determinism."""
import csv

import numpy as np
import pytest

from adaptrom import euler, report, rom
from adaptrom.fields import FieldOnMesh
from adaptrom.mesh import build_case_mesh
from adaptrom.report import ReportError, SliceSpec


def _read_csv(path):
    with open(path) as f:
        rows = list(csv.reader(f))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def test_slice_spec_validation():
    with pytest.raises(ReportError):
        SliceSpec("diagonal")
    with pytest.raises(ReportError):
        SliceSpec("constant-y", 0.5, n_samples=1)


def test_constant_field_gives_flat_line(tmp_path, square_p2):
    f = FieldOnMesh(square_p2, np.full(square_p2.n_nodes, 7.0))
    paths = report.export_slice(tmp_path, "square", 1.0, f,
                                SliceSpec("constant-y", 0.5))
    hdr, data = _read_csv(paths[0])
    assert hdr == ["x", "value"]
    assert np.allclose(data[:, 1], 7.0, atol=1e-10)


def test_sample_count_two_gives_two_rows(tmp_path, square_p2):
    f = FieldOnMesh(square_p2, square_p2.nodes[:, 0])
    paths = report.export_slice(tmp_path, "square", 1.0, f,
                                SliceSpec("constant-y", 0.5, n_samples=2))
    _, data = _read_csv(paths[0])
    assert data.shape[0] == 2


def test_slice_outside_domain_raises(tmp_path, square_p2):
    f = FieldOnMesh(square_p2, square_p2.nodes[:, 0])
    with pytest.raises(ReportError):
        report.export_slice(tmp_path, "square", 1.0, f,
                            SliceSpec("constant-y", 5.0))


def test_rank_one_set_singular_values(tmp_path, square_p2, rng):
    f = FieldOnMesh(square_p2, rng.standard_normal((square_p2.n_nodes, 2)))
    s = rom.assemble_snapshots([(1.0, f), (2.0, FieldOnMesh(
        square_p2, 2.0 * f.values))], "mapped-solution")
    b = rom.compute_pod(s, 2)
    paths = report.export_singular_values(tmp_path, "square", {"colinear": b})
    hdr, data = _read_csv(paths[0])
    assert hdr == ["k", "sigma_ratio:colinear"]
    assert data[0, 1] == pytest.approx(1.0)
    assert data[1, 1] <= 1e-12


def test_two_sets_give_two_columns_with_labels(tmp_path, square_p2, rng):
    f = FieldOnMesh(square_p2, rng.standard_normal((square_p2.n_nodes, 2)))
    g = FieldOnMesh(square_p2, rng.standard_normal((square_p2.n_nodes, 2)))
    s = rom.assemble_snapshots([(1.0, f), (2.0, g)], "mapped-solution")
    b = rom.compute_pod(s, 2)
    paths = report.export_singular_values(tmp_path, "square",
                                          {"alpha": b, "beta": b})
    hdr, _ = _read_csv(paths[0])
    assert hdr == ["k", "sigma_ratio:alpha", "sigma_ratio:beta"]
    svg = paths[1].read_text()
    assert "alpha" in svg and "beta" in svg


def test_wall_pressure_constant_for_stagnant_gas(tmp_path):
    mesh = build_case_mesh("cylinder", (4, 6), 2)
    # gas at rest: p = 1/(gamma Ma^2) with Ma from the label only
    u = np.array([1.0, 0.0, 0.0, euler.free_stream(2.0)[3] - 0.5])
    f = FieldOnMesh(mesh, np.tile(u, (mesh.n_nodes, 1)))
    paths = report.export_wall_quantity(tmp_path, "cylinder", 2.0, f)
    _, data = _read_csv(paths[0])
    assert np.allclose(data[:, 1], data[0, 1], atol=1e-10)
    assert np.all(np.diff(data[:, 0]) > 0)


def test_wall_absent_raises(tmp_path):
    from adaptrom.mesh import _rect_mesh
    mesh = _rect_mesh(4, 3, 2, None,
                      tags=("outflow", "outflow", "outflow", "inflow"),
                      case="channel")
    f = FieldOnMesh(mesh, np.tile(euler.free_stream(2.0), (mesh.n_nodes, 1)))
    with pytest.raises(ReportError):
        report.export_wall_quantity(tmp_path, "channel", 2.0, f)


def test_exports_are_byte_deterministic(tmp_path, square_p2, rng):
    f = FieldOnMesh(square_p2, rng.standard_normal(square_p2.n_nodes))
    d1 = tmp_path / "a"
    d2 = tmp_path / "b"
    d1.mkdir()
    d2.mkdir()
    p1 = report.export_slice(d1, "square", 1.5, f, SliceSpec("constant-y", 0.5))
    p2 = report.export_slice(d2, "square", 1.5, f, SliceSpec("constant-y", 0.5))
    for a, b in zip(p1, p2):
        assert a.read_bytes() == b.read_bytes()


def test_svg_coordinates_derive_from_csv(tmp_path, square_p2):
    f = FieldOnMesh(square_p2, square_p2.nodes[:, 0])
    csv_path, svg_path = report.export_slice(
        tmp_path, "square", 1.0, f, SliceSpec("constant-y", 0.5, n_samples=3))
    _, data = _read_csv(csv_path)
    svg = svg_path.read_text()
    assert "polyline" in svg
    # a linear field sampled at 3 points gives 3 polyline vertices
    pts = svg.split('points="')[1].split('"')[0].split()
    assert len(pts) == 3


def test_file_naming_scheme(tmp_path, square_p2):
    f = FieldOnMesh(square_p2, square_p2.nodes[:, 0])
    paths = report.export_slice(tmp_path, "square", 2.5, f,
                                SliceSpec("constant-y", 0.5))
    assert paths[0].name == "square_constant-y_2p5.csv"
    assert paths[1].name == "square_constant-y_2p5.svg"
