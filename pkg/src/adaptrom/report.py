"""Line-data exports: singular-value decay, field slices, and wall
profiles, each emitted as a CSV table plus a static SVG plot.

SVGs are generated directly (fixed 800x600 canvas) so exports are
byte-deterministic; the SVG path coordinates are derived from the same
rows that go into the CSV.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import euler
from .fields import FieldOnMesh
from .interp import interpolate_to_points

SVG_W, SVG_H = 800, 600
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 80, 30, 40, 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class ReportError(ValueError):
    pass


@dataclass
class SliceSpec:
    """A sampling line through the domain.

    kind 'stagnation-line': the upstream symmetry line y = value (value is
    the transverse coordinate, normally 0), truncated at the body.
    kind 'constant-y': the full horizontal line y = value.
    kind 'wall': the wall boundary, parameterized by arc length.
    """

    kind: str
    value: float = 0.0
    n_samples: int = 200

    def __post_init__(self):
        if self.kind not in ("stagnation-line", "constant-y", "wall"):
            raise ReportError(f"unknown slice kind {self.kind!r}")
        if self.n_samples < 2:
            raise ReportError("need at least 2 samples")


def _fmt(x: float) -> str:
    return format(float(x), ".16e")


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    rows = len(columns[0])
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for i in range(rows):
            f.write(",".join(_fmt(c[i]) for c in columns) + "\n")


def _svg_plot(path: Path, curves: list[tuple[str, np.ndarray, np.ndarray]],
              xlabel: str, ylabel: str, logy: bool = False) -> None:
    """curves: (label, x, y) triples sharing one axis frame."""
    xs = np.concatenate([c[1] for c in curves])
    ys = np.concatenate([c[2] for c in curves])
    if logy:
        ys = ys[ys > 0]
        if ys.size == 0:
            raise ReportError("log-scale plot needs positive values")
        ylo, yhi = np.log10(np.min(ys)), np.log10(np.max(ys))
    else:
        ylo, yhi = float(np.min(ys)), float(np.max(ys))
    xlo, xhi = float(np.min(xs)), float(np.max(xs))
    if xhi - xlo < 1e-300:
        xlo, xhi = xlo - 0.5, xhi + 0.5
    if yhi - ylo < 1e-300:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    pw = SVG_W - MARGIN_L - MARGIN_R
    ph = SVG_H - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + pw * (x - xlo) / (xhi - xlo)

    def py(y):
        v = np.log10(y) if logy else y
        return MARGIN_T + ph * (1.0 - (v - ylo) / (yhi - ylo))

    out = io.StringIO()
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" '
              f'height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">\n')
    out.write(f'<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>\n')
    out.write(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" '
              'fill="none" stroke="black"/>\n')
    # axis ticks
    for i in range(5):
        xt = xlo + (xhi - xlo) * i / 4
        out.write(f'<text x="{px(xt):.1f}" y="{SVG_H - MARGIN_B + 20}" '
                  f'font-size="12" text-anchor="middle">{xt:.3g}</text>\n')
        yv = ylo + (yhi - ylo) * i / 4
        lab = 10.0 ** yv if logy else yv
        ypix = MARGIN_T + ph * (1.0 - i / 4)
        out.write(f'<text x="{MARGIN_L - 8}" y="{ypix:.1f}" font-size="12" '
                  f'text-anchor="end">{lab:.3g}</text>\n')
    out.write(f'<text x="{MARGIN_L + pw / 2:.1f}" y="{SVG_H - 15}" '
              f'font-size="14" text-anchor="middle">{xlabel}</text>\n')
    out.write(f'<text x="20" y="{MARGIN_T + ph / 2:.1f}" font-size="14" '
              f'text-anchor="middle" transform="rotate(-90 20 '
              f'{MARGIN_T + ph / 2:.1f})">{ylabel}</text>\n')
    for k, (label, cx, cy) in enumerate(curves):
        color = PALETTE[k % len(PALETTE)]
        pts = []
        for x, y in zip(cx, cy):
            if logy and y <= 0:
                continue
            pts.append(f"{px(x):.2f},{py(y):.2f}")
        out.write(f'<polyline points="{" ".join(pts)}" fill="none" '
                  f'stroke="{color}" stroke-width="1.5"/>\n')
        ly = MARGIN_T + 18 + 18 * k
        out.write(f'<line x1="{SVG_W - MARGIN_R - 150}" y1="{ly}" '
                  f'x2="{SVG_W - MARGIN_R - 120}" y2="{ly}" '
                  f'stroke="{color}" stroke-width="1.5"/>\n')
        out.write(f'<text x="{SVG_W - MARGIN_R - 112}" y="{ly + 4}" '
                  f'font-size="12">{label}</text>\n')
    out.write("</svg>\n")
    path.write_text(out.getvalue())


def _mu_tag(mu: float) -> str:
    return format(float(mu), ".6g").replace(".", "p").replace("-", "m")


def _names(out_dir, case: str, kind: str, mu: float | None) -> tuple[Path, Path]:
    stem = f"{case}_{kind}" + ("" if mu is None else f"_{_mu_tag(mu)}")
    out = Path(out_dir)
    return out / f"{stem}.csv", out / f"{stem}.svg"


# ---------------------------------------------------------------------------
# exporters
# ---------------------------------------------------------------------------

def export_singular_values(out_dir, case: str, sets: dict) -> list[Path]:
    """Normalized singular-value decay sigma_k / sigma_1 per snapshot set.

    `sets` maps a label to anything carrying `singular_values` (a POD
    basis) or to a SnapshotSet (decomposed here). One CSV column per set;
    one log-scale SVG with all curves.
    """
    if not sets:
        raise ReportError("need at least one snapshot set")
    series = {}
    for label, obj in sets.items():
        sig = getattr(obj, "singular_values", None)
        if sig is None:
            from . import rom
            sig = rom.compute_pod(obj, 1).singular_values
        sig = np.asarray(sig, dtype=float)
        if sig[0] <= 0:
            raise ReportError(f"set {label!r} has a zero leading singular value")
        series[label] = sig / sig[0]
    n = max(len(s) for s in series.values())
    cols = [np.arange(1, n + 1, dtype=float)]
    header = ["k"]
    curves = []
    for label, s in series.items():
        padded = np.full(n, np.nan)
        padded[:len(s)] = s
        cols.append(padded)
        header.append(f"sigma_ratio:{label}")
        curves.append((label, np.arange(1, len(s) + 1, dtype=float),
                       np.maximum(s, 1e-300)))
    csv_path, svg_path = _names(out_dir, case, "singular-values", None)
    _write_csv(csv_path, header, cols)
    _svg_plot(svg_path, curves, "mode index k", "sigma_k / sigma_1", logy=True)
    return [csv_path, svg_path]


def _slice_points(mesh, spec: SliceSpec, coords: np.ndarray | None):
    """Sample points along the slice, bounded by the nodes near the line in
    the requested configuration."""
    pts_all = mesh.nodes if coords is None else coords
    y0 = spec.value
    tol = 0.25 * mesh.mean_edge_length
    near = np.abs(pts_all[:, 1] - y0) < tol
    if not np.any(near):
        raise ReportError(f"slice y = {y0} does not intersect the domain")
    x = pts_all[near, 0]
    if spec.kind == "stagnation-line":
        # keep the upstream side of the body: the contiguous band that
        # contains the smallest x
        xmin = float(np.min(x))
        xs = np.sort(np.unique(x))
        gap = np.diff(xs)
        cut = np.nonzero(gap > 4.0 * mesh.mean_edge_length)[0]
        xmax = float(xs[cut[0]]) if len(cut) else float(xs[-1])
    else:
        xmin, xmax = float(np.min(x)), float(np.max(x))
    t = np.linspace(xmin, xmax, spec.n_samples)
    return np.column_stack([t, np.full_like(t, y0)]), t


def export_slice(out_dir, case: str, mu: float, field: FieldOnMesh,
                 spec: SliceSpec, coords: np.ndarray | None = None,
                 component: int = 0, label: str | None = None) -> list[Path]:
    """Sample one component of `field` along a line and emit CSV + SVG.

    `coords` selects the nodal configuration to sample in (pass the mapped
    node positions for a field on an adapted mesh)."""
    if spec.kind == "wall":
        raise ReportError("use export_wall_quantity for wall traces")
    pts, t = _slice_points(field.mesh, spec, coords)
    vals = interpolate_to_points(field, pts, coords=coords,
                                 clamp_far=True)[:, component]
    kind = spec.kind if label is None else f"{spec.kind}-{label}"
    csv_path, svg_path = _names(out_dir, case, kind, mu)
    _write_csv(csv_path, ["x", "value"], [t, vals])
    _svg_plot(svg_path, [(f"mu={mu:g}", t, vals)], "x", "value")
    return [csv_path, svg_path]


def _wall_trace(mesh, coords: np.ndarray | None):
    """Ordered wall node indices and their arc-length parameterization."""
    try:
        wall_segs = set(mesh.segment_index("wall"))
    except Exception as exc:
        raise ReportError(f"mesh has no wall segment: {exc}") from exc
    if not wall_segs:
        raise ReportError("mesh has no wall segment")
    pts_all = mesh.nodes if coords is None else coords
    nodes = []
    for e, f, s in mesh.boundary_faces:
        if int(s) in wall_segs:
            for j in mesh._face_node_ids(f):
                nodes.append(int(mesh.elements[e, j]))
    nodes = sorted(set(nodes))
    if not nodes:
        raise ReportError("mesh has no wall segment")
    pts = pts_all[nodes]
    # order by angle around the wall centroid (wall boundaries here are
    # simple arcs or closed loops)
    c = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0]))
    nodes = [nodes[i] for i in order]
    pts = pts_all[nodes]
    seg = np.hypot(*np.diff(pts, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    return np.array(nodes), arc


def export_wall_quantity(out_dir, case: str, mu: float, field: FieldOnMesh,
                         coords: np.ndarray | None = None,
                         quantity: str = "pressure",
                         gamma: float = euler.GAMMA_DEFAULT) -> list[Path]:
    """Nondimensional wall pressure p / p_inf versus arc length."""
    if quantity != "pressure":
        raise ReportError(f"unsupported wall quantity {quantity!r}")
    if field.n_components != 4:
        raise ReportError("wall pressure needs the 4 conserved components")
    nodes, arc = _wall_trace(field.mesh, coords)
    p = euler.pressure(field.values[nodes], gamma)
    p_inf = euler.pressure(euler.free_stream(mu, gamma), gamma)
    ratio = p / p_inf
    csv_path, svg_path = _names(out_dir, case, "wall-pressure", mu)
    _write_csv(csv_path, ["arc_length", "p_over_pinf"], [arc, ratio])
    _svg_plot(svg_path, [(f"mu={mu:g}", arc, ratio)],
              "arc length", "p / p_inf")
    return [csv_path, svg_path]
