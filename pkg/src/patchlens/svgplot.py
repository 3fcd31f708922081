"""Minimal deterministic SVG line and scatter plots."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 360
MARGIN = 50


def _range(v):
    v = np.asarray(v, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        pad = abs(lo) * 0.05 or 1.0
        return lo - pad, hi + pad
    return lo, hi


def _frame(xlim, ylim, title, xlabel, ylabel):
    x0, x1 = MARGIN, WIDTH - MARGIN // 2
    y0, y1 = HEIGHT - MARGIN, MARGIN // 2
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = xlim[0] + frac * (xlim[1] - xlim[0])
        yv = ylim[0] + frac * (ylim[1] - ylim[0])
        px = x0 + frac * (x1 - x0)
        py = y0 + frac * (y1 - y0)
        parts.append(f'<text x="{px:.2f}" y="{y0 + 16}" font-size="10" text-anchor="middle">{xv:.3g}</text>')
        parts.append(f'<text x="{x0 - 4}" y="{py + 3:.2f}" font-size="10" text-anchor="end">{yv:.3g}</text>')
    parts.append(f'<text x="{(x0 + x1) / 2:.2f}" y="{HEIGHT - 10}" font-size="12" '
                 f'text-anchor="middle">{escape(xlabel)}</text>')
    parts.append(f'<text x="14" y="{(y0 + y1) / 2:.2f}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 14 {(y0 + y1) / 2:.2f})">{escape(ylabel)}</text>')
    if title:
        parts.append(f'<text x="{WIDTH / 2:.2f}" y="16" font-size="13" text-anchor="middle">{escape(title)}</text>')

    def to_px(x, y):
        px = x0 + (x - xlim[0]) / (xlim[1] - xlim[0]) * (x1 - x0)
        py = y0 + (y - ylim[0]) / (ylim[1] - ylim[0]) * (y1 - y0)
        return px, py

    return parts, to_px


def line_plot(x, y, title="", xlabel="x", ylabel="y"):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    parts, to_px = _frame(_range(x), _range(y), title, xlabel, ylabel)
    pts = " ".join("{:.2f},{:.2f}".format(*to_px(a, b)) for a, b in zip(x, y) if np.isfinite(b))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>')
    for a, b in zip(x, y):
        if np.isfinite(b):
            px, py = to_px(a, b)
            parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2.5" fill="#1f77b4"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def scatter_plot(x, y, title="", xlabel="x", ylabel="y"):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    parts, to_px = _frame(_range(x), _range(y), title, xlabel, ylabel)
    for a, b in zip(x, y):
        px, py = to_px(a, b)
        parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="1.5" fill="#1f77b4" fill-opacity="0.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
