"""Plot-ready exports: TSV panel data and minimal SVG line charts.

Dynamics panels are loss-indexed: x is the training loss at each NTK
snapshot, averaged over the ensemble members that have a snapshot at that
epoch. Scaling panels have one row per sweep value. Floats are written with
``repr`` so reading a TSV back gives the exact values that were plotted.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .records import RunRecord, header_comment
from .runner import group_by_value, mean_stderr

DYNAMICS_METRICS = ("trace", "effective_rank", "label_alignment", "misalignment")
SCALING_METRICS = (
    "min_test_loss",
    "trace_init",
    "trace_ratio",
    "effective_rank_min",
    "abs_adaptation_rate_min",
    "label_alignment_min",
)
DYNAMICS_COLUMNS = ("series", "epoch", "x", "y", "stderr", "n")
SCALING_COLUMNS = ("x", "y", "stderr", "n")


class ExportError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_tsv(path: Path, comments: list[str], columns, rows) -> None:
    lines = list(comments)
    lines.append("\t".join(columns))
    lines.extend("\t".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def read_tsv(path) -> tuple[list[str], dict[str, np.ndarray]]:
    """Comment lines and numeric columns of an exported TSV."""
    comments, header, rows = [], None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            comments.append(line)
        elif header is None:
            header = line.split("\t")
        elif line:
            rows.append([float(v) for v in line.split("\t")])
    if header is None:
        raise ExportError(f"{path}: no header row")
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return comments, {name: data[:, i] for i, name in enumerate(header)}


def dynamics_rows(records: list[RunRecord], metric: str) -> list[tuple]:
    """One row per (sweep value, snapshot epoch) over successful members."""
    groups: dict[tuple[float, int], list] = {}
    for rec in records:
        if not rec.ok:
            continue
        for p in rec.trace.points:
            y = getattr(p, metric)
            if y is None:
                continue
            groups.setdefault((float(rec.sweep_value), p.epoch), []).append((rec.seed, p.train_loss, y))
    rows = []
    for (value, epoch), items in sorted(groups.items()):
        items.sort()
        x = float(np.mean([i[1] for i in items]))
        s = mean_stderr([i[2] for i in items])
        rows.append((value, epoch, x, s.mean, s.stderr, s.n))
    return rows


def scaling_rows(records: list[RunRecord], metric: str) -> list[tuple]:
    return [(float(e.sweep_value), e[metric].mean, e[metric].stderr, e[metric].n) for e in group_by_value(records)]


def export_plots(records: list[RunRecord], out_dir, *, svg: bool = True) -> list[Path]:
    """Write dynamics_<metric>.tsv and scaling_<metric>.tsv (plus .svg charts) under ``out_dir``."""
    if not records:
        raise ExportError("no records to export")
    hashes = {r.config_hash for r in records}
    if len(hashes) != 1:
        raise ExportError(f"records come from {len(hashes)} different configs")
    config_hash = hashes.pop()
    axis = records[0].sweep_axis
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for metric in DYNAMICS_METRICS:
        rows = dynamics_rows(records, metric)
        path = out / f"dynamics_{metric}.tsv"
        comments = [header_comment(config_hash), f"# panel: {metric} vs train loss, series = {axis}"]
        _write_tsv(path, comments, DYNAMICS_COLUMNS, rows)
        written.append(path)
        if svg and rows:
            series: dict[str, tuple[list, list]] = {}
            for value, _, x, y, _, _ in rows:
                xs, ys = series.setdefault(f"{value:g}", ([], []))
                xs.append(x)
                ys.append(y)
            p = out / f"dynamics_{metric}.svg"
            p.write_text(svg_line_chart(series, title=f"{metric} ({config_hash})", xlabel="train loss", ylabel=metric, logx=True))
            written.append(p)
    for metric in SCALING_METRICS:
        rows = scaling_rows(records, metric)
        path = out / f"scaling_{metric}.tsv"
        comments = [header_comment(config_hash), f"# panel: ensemble mean {metric} vs {axis}"]
        _write_tsv(path, comments, SCALING_COLUMNS, rows)
        written.append(path)
        if svg and rows:
            xs = [r[0] for r in rows]
            ys = [r[1] for r in rows]
            logy = all(y > 0 for y in ys)
            p = out / f"scaling_{metric}.svg"
            p.write_text(
                svg_line_chart({metric: (xs, ys)}, title=f"{metric} ({config_hash})", xlabel=axis, ylabel=metric, logx=axis != "keep_fractions", logy=logy)
            )
            written.append(p)
    return written


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def svg_line_chart(
    series: dict[str, tuple],
    *,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    logx: bool = False,
    logy: bool = False,
    width: int = 480,
    height: int = 320,
) -> str:
    """A self-contained SVG with one polyline (and markers) per series."""
    tx = (lambda v: math.log10(v)) if logx else float
    ty = (lambda v: math.log10(v)) if logy else float
    pts = {
        name: [(tx(x), ty(y)) for x, y in zip(*xy) if math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)]
        for name, xy in series.items()
    }
    allx = [p[0] for v in pts.values() for p in v] or [0.0, 1.0]
    ally = [p[1] for v in pts.values() for p in v] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    left, right, top, bottom = 60, 110, 30, 45
    pw, ph = width - left - right, height - top - bottom

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    def tick(v, log):
        return f"{10 ** v:.3g}" if log else f"{v:.3g}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        parts.append(f'<text x="{sx(fx):.1f}" y="{top + ph + 14}" text-anchor="middle">{tick(fx, logx)}</text>')
        parts.append(f'<text x="{left - 4}" y="{sy(fy) + 4:.1f}" text-anchor="end">{tick(fy, logy)}</text>')
    for k, (name, p) in enumerate(pts.items()):
        color = _PALETTE[k % len(_PALETTE)]
        if p:
            coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in p)
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
            parts.extend(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2" fill="{color}"/>' for a, b in p)
        ly = top + 12 + 14 * k
        parts.append(f'<line x1="{left + pw + 8}" y1="{ly - 4}" x2="{left + pw + 22}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + pw + 26}" y="{ly}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
