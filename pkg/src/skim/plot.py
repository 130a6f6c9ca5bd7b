"""Standalone SVG charts (and tidy CSVs) from metrics and QA grid files.

No plotting library: line charts are polylines, the grid is a rect heat-map.
Output is a pure function of the inputs.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

from skim.harness.config import parse_lines
from skim.harness.metrics import read_metrics

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=40, bottom=50)
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


class PlotError(ValueError):
    pass


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    v = start
    while v <= hi + step * 1e-9:
        if v >= lo - step * 1e-9:
            ticks.append(round(v, 10))
        v += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_chart(series: list[tuple[str, list[float], list[float]]], title: str, xlabel: str, ylabel: str) -> str:
    xs = [x for _, sx, _ in series for x in sx]
    ys = [y for _, _, sy in series for y in sy]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(0.0, min(ys)), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN["top"] + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2 - MARGIN["right"] / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for t in _nice_ticks(y0, y1):
        out.append(f'<line x1="{MARGIN["left"]}" x2="{MARGIN["left"] + pw}" y1="{_fmt(py(t))}" y2="{_fmt(py(t))}" stroke="#eee"/>')
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{_fmt(py(t) + 4)}" text-anchor="end">{t:g}</text>')
    for t in _nice_ticks(x0, x1):
        out.append(f'<text x="{_fmt(px(t))}" y="{MARGIN["top"] + ph + 16}" text-anchor="middle">{t:g}</text>')
    out.append(f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text transform="translate(16 {MARGIN["top"] + ph / 2:.1f}) rotate(-90)" text-anchor="middle">{escape(ylabel)}</text>')
    for i, (label, sx, sy) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(sx, sy))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = MARGIN["top"] + 14 + 18 * i
        lx = MARGIN["left"] + pw + 12
        out.append(f'<line x1="{lx}" x2="{lx + 20}" y1="{ly - 4}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(grid: dict, metric: str = "accuracy") -> str:
    rows, cols = grid["k_train"], grid["k_infer"]
    values = grid[metric]
    cell = 70
    left, top = 110, 60
    w = left + cell * len(cols) + 30
    h = top + cell * len(rows) + 50
    flat = [v for row in values for v in row if v is not None]
    lo, hi = (min(flat), max(flat)) if flat else (0.0, 1.0)
    span = (hi - lo) or 1.0
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2:.1f}" y="22" text-anchor="middle" font-size="14">QA {escape(metric)} (K_train rows, K_infer columns)</text>',
    ]
    for j, k in enumerate(cols):
        out.append(f'<text x="{left + cell * j + cell / 2:.1f}" y="{top - 8}" text-anchor="middle">{k}</text>')
    for i, k in enumerate(rows):
        out.append(f'<text x="{left - 8}" y="{top + cell * i + cell / 2 + 4:.1f}" text-anchor="end">{k}</text>')
        for j in range(len(cols)):
            v = values[i][j]
            if v is None:
                fill, label = "#ddd", "n/a"
            else:
                shade = int(round(235 - 175 * (v - lo) / span))
                fill, label = f"rgb({shade},{shade},255)", f"{v:.3f}"
            x, y = left + cell * j, top + cell * i
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="white"/>')
            out.append(f'<text x="{x + cell / 2:.1f}" y="{y + cell / 2 + 4:.1f}" text-anchor="middle">{label}</text>')
    out.append(f'<text x="{left + cell * len(cols) / 2:.1f}" y="{h - 14}" text-anchor="middle">K_infer</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _run_label(path: Path) -> str:
    resolved = path.parent / "config.resolved"
    if resolved.exists():
        values = parse_lines(resolved.read_text())
        if "skip.k" in values:
            return f"K={values['skip.k']}"
    return path.parent.name or path.stem


def _is_grid(path: Path) -> bool:
    if path.suffix != ".json":
        return False
    try:
        return "cells" in json.loads(path.read_text())
    except ValueError:
        return False


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def plot(inputs, out_dir) -> list[Path]:
    """Write charts for every input; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    runs = []
    for p in map(Path, inputs):
        if not p.exists() or p.stat().st_size == 0:
            raise PlotError(f"empty or missing input: {p}")
        if _is_grid(p):
            grid = json.loads(p.read_text())
            svg, table = out_dir / f"{p.stem}_heatmap.svg", out_dir / f"{p.stem}.csv"
            svg.write_text(heatmap(grid))
            _write_csv(table, ["k_train", "k_infer", "accuracy", "mean_windows", "mean_skipped"],
                       ([c["k_train"], c["k_infer"], c["accuracy"], c["mean_windows"], c["mean_skipped"]]
                        for c in grid["cells"]))
            written += [svg, table]
            continue
        records = read_metrics(p)
        if not records:
            raise PlotError(f"no metrics records in {p}")
        runs.append((_run_label(p), records))

    if runs:
        labels = [label for label, _ in runs]
        runs = [(f"{label} ({i})" if labels.count(label) > 1 else label, recs)
                for i, (label, recs) in enumerate(runs)]
        for metric, ylabel in (("mean_loss", "mean loss (nats)"), ("avg_skip", "average skipped tokens")):
            stem = "loss" if metric == "mean_loss" else metric
            series = [(label, [r.step for r in recs], [getattr(r, metric) for r in recs]) for label, recs in runs]
            svg, table = out_dir / f"{stem}.svg", out_dir / f"{stem}.csv"
            svg.write_text(line_chart(series, f"{ylabel} vs step", "step", ylabel))
            _write_csv(table, ["run", "step", metric],
                       ([label, r.step, getattr(r, metric)] for label, recs in runs for r in recs))
            written += [svg, table]
    return written
