"""Static SVG line charts with a log10 x-axis, written as plain text."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=50)
PALETTE = ["#d62728", "#2ca02c", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _ticks(lo: float, hi: float, count: int = 5) -> list:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=mag * 10)
    first = math.ceil(lo / step) * step
    return [first + k * step for k in range(int((hi - first) / step) + 1)]


def line_chart(
    path,
    series: Sequence[tuple],
    x_range: tuple,
    title: str = "",
    xlabel: str = "tau",
    ylabel: str = "",
    legend: bool = True,
) -> None:
    """Write a chart; ``series`` holds (label, xs, ys) or (label, xs, ys, color) tuples.

    Points outside ``x_range`` or with non-finite y are dropped.
    """
    lx0, lx1 = math.log10(x_range[0]), math.log10(x_range[1])
    cleaned = []
    for k, s in enumerate(series):
        label, xs, ys = s[:3]
        color = s[3] if len(s) > 3 else PALETTE[k % len(PALETTE)]
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        keep = (xs >= x_range[0] * (1 - 1e-12)) & (xs <= x_range[1] * (1 + 1e-12)) & np.isfinite(ys)
        order = np.argsort(xs[keep], kind="stable")
        cleaned.append((label, np.log10(xs[keep][order]), ys[keep][order], color))
    ys_all = np.concatenate([c[2] for c in cleaned]) if cleaned else np.zeros(0)
    if ys_all.size:
        y0, y1 = float(ys_all.min()), float(ys_all.max())
    else:
        y0, y1 = 0.0, 1.0
    if y1 - y0 < 1e-12 * max(1.0, abs(y0)):
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.04 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(lx):
        return MARGIN["left"] + (lx - lx0) / (lx1 - lx0) * pw

    def py(y):
        return MARGIN["top"] + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for e in range(math.ceil(lx0), math.floor(lx1) + 1):
        x = px(e)
        out.append(f'<line x1="{x:.2f}" y1="{MARGIN["top"] + ph}" x2="{x:.2f}" y2="{MARGIN["top"] + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">1e{e}</text>')
    for t in _ticks(y0, y1):
        y = py(t)
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{y:.2f}" x2="{MARGIN["left"]}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{y + 4:.2f}" text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)} (log10 scale)</text>')
    out.append(
        f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    for k, (label, lx, ys, color) in enumerate(cleaned):
        if lx.size:
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(lx, ys))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.3" points="{pts}"/>')
        if legend:
            ly = MARGIN["top"] + 12 + 16 * k
            lx_ = MARGIN["left"] + pw + 10
            out.append(f'<line x1="{lx_}" y1="{ly}" x2="{lx_ + 18}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{lx_ + 22}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
