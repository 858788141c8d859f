"""Minimal SVG line charts for metrics CSVs."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .metrics import METRIC_COLUMNS, read_metrics

PLOT_COLUMNS = tuple(c for c in METRIC_COLUMNS if c != "iter")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT = 640, 400
MARGIN = (60, 20, 30, 50)  # left, right, top, bottom


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_chart(series: list[tuple[str, np.ndarray, np.ndarray]], title: str) -> str:
    """One polyline per ``(name, x, y)``; NaN points are skipped."""
    left, right, top, bottom = MARGIN
    xs = np.concatenate([s[1][np.isfinite(s[2])] for s in series])
    ys = np.concatenate([s[2][np.isfinite(s[2])] for s in series])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{left - 5}" y="{top + 10}" text-anchor="end" font-family="sans-serif" font-size="10">{_fmt(y1)}</text>',
        f'<text x="{left - 5}" y="{top + ph}" text-anchor="end" font-family="sans-serif" font-size="10">{_fmt(y0)}</text>',
        f'<text x="{left}" y="{top + ph + 15}" text-anchor="middle" font-family="sans-serif" font-size="10">{_fmt(x0)}</text>',
        f'<text x="{left + pw}" y="{top + ph + 15}" text-anchor="middle" font-family="sans-serif" font-size="10">{_fmt(x1)}</text>',
        f'<text x="{left + pw / 2}" y="{HEIGHT - 8}" text-anchor="middle" font-family="sans-serif" font-size="11">iteration</text>',
    ]
    for k, (name, x, y) in enumerate(series):
        ok = np.isfinite(y)
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{px(a):.3f},{py(b):.3f}" for a, b in zip(x[ok], y[ok]))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}" data-run="{escape(name)}"/>')
        ly = top + 14 + 14 * k
        parts.append(f'<line x1="{left + 10}" y1="{ly - 4}" x2="{left + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + 35}" y="{ly}" font-family="sans-serif" font-size="11">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_metrics(paths, out_dir: str | Path, names: list[str] | None = None, columns=PLOT_COLUMNS) -> list[Path]:
    """Write one SVG per metric column that has data, overlaying every run.

    Every CSV is read and validated before anything is written.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise ValueError("no metrics files given")
    names = names or [p.parent.name or p.stem for p in paths]
    if len(names) != len(paths):
        raise ValueError("need one run name per metrics file")
    runs = [read_metrics(p) for p in paths]
    for p, run in zip(paths, runs):
        if run["iter"].size == 0:
            raise ValueError(f"{p}: metrics file has no rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for col in columns:
        series = [(name, run["iter"], run[col]) for name, run in zip(names, runs) if np.isfinite(run[col]).any()]
        if not series:
            continue
        target = out_dir / f"{col}.svg"
        target.write_text(line_chart(series, col), encoding="utf-8")
        written.append(target)
    return written
