"""Static SVG output: lattice heat maps and accuracy-vs-k line charts."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"]


def _color(v: float) -> str:
    """Black -> red -> yellow -> white ramp for ``v`` in [0, 1]."""
    v = float(np.clip(v, 0.0, 1.0))
    r = min(1.0, 3 * v)
    g = min(1.0, max(0.0, 3 * v - 1))
    b = max(0.0, 3 * v - 2)
    return "#%02x%02x%02x" % (round(255 * r), round(255 * g), round(255 * b))


def grid_heatmap(values, rows: int, cols: int, path: str | Path, title: str = "", cell: int = 12, log: bool = True) -> None:
    """Row-major heat map of ``values`` (node ``r * cols + c``), max-normalized.

    With ``log`` set, colors follow log10 of the normalized value over six decades.
    """
    v = np.asarray(values, dtype=float).reshape(rows, cols)
    peak = v.max()
    v = v / peak if peak > 0 else v
    if log:
        with np.errstate(divide="ignore"):
            v = np.clip((np.log10(np.maximum(v, 1e-300)) + 6) / 6, 0, 1)
    top = 20 if title else 0
    w, h = cols * cell, rows * cell + top
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">']
    if title:
        out.append(f'<text x="2" y="14" font-family="sans-serif" font-size="12">{escape(title)}</text>')
    for r in range(rows):
        for c in range(cols):
            out.append(
                f'<rect x="{c * cell}" y="{top + r * cell}" width="{cell}" height="{cell}" fill="{_color(v[r, c])}"/>'
            )
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def line_chart(
    series: Mapping[str, Sequence[tuple[float, float]]],
    path: str | Path,
    xlabel: str = "k",
    ylabel: str = "accuracy",
    y_range: tuple[float, float] = (0.0, 1.0),
    width: int = 480,
    height: int = 320,
) -> None:
    """One polyline per series with a legend; points are ``(x, y)`` pairs."""
    pad_l, pad_r, pad_t, pad_b = 50, 110, 15, 40
    xs = [x for pts in series.values() for x, _ in pts]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    y0, y1 = y_range
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def py(y):
        return pad_t + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">']
    out.append(f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>')
    for frac in (0.0, 0.5, 1.0):
        y = y0 + frac * (y1 - y0)
        out.append(f'<text x="{pad_l - 6}" y="{py(y) + 4:.1f}" font-size="10" text-anchor="end">{y:g}</text>')
    for x in sorted(set(xs)):
        out.append(f'<text x="{px(x):.1f}" y="{pad_t + ph + 14}" font-size="10" text-anchor="middle">{x:g}</text>')
    out.append(f'<text x="{pad_l + pw / 2}" y="{height - 6}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="12" y="{pad_t + ph / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 12 {pad_t + ph / 2})">{escape(ylabel)}</text>'
    )
    for i, (name, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = sorted(pts)
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{color}"/>')
        ly = pad_t + 14 + 16 * i
        out.append(f'<line x1="{width - pad_r + 10}" y1="{ly - 4}" x2="{width - pad_r + 28}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - pad_r + 32}" y="{ly}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
