"""Standalone SVG rendering of a half-normal plot with its envelope."""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .envelope import Envelope

WIDTH, HEIGHT = 640, 480
MARGIN = dict(left=64, right=20, top=40, bottom=52)
INSIDE_COLOUR = "#222222"
OUTSIDE_COLOUR = "#d62728"


@dataclass
class PlotSpec:
    envelope: Envelope
    title: str = ""
    highlight_outside: bool = True


def _ticks(lo: float, hi: float, count: int = 5) -> np.ndarray:
    span = hi - lo
    if span <= 0:
        return np.array([lo])
    raw = span / count
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + step * 1e-9, step)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(plot: PlotSpec) -> str:
    env = plot.envelope
    x = np.asarray(env.scores, dtype=float)
    ys = [np.asarray(a, dtype=float) for a in (env.observed, env.lower, env.median, env.upper)]
    x_lo, x_hi = 0.0, float(x.max()) * 1.05 if x.size else 1.0
    y_hi = max(float(np.max([a.max() for a in ys])) * 1.05, 1e-12)
    y_lo = 0.0
    left, right = MARGIN["left"], WIDTH - MARGIN["right"]
    top, bottom = MARGIN["top"], HEIGHT - MARGIN["bottom"]

    def px(v):
        return left + (v - x_lo) / (x_hi - x_lo) * (right - left)

    def py(v):
        return bottom - (v - y_lo) / (y_hi - y_lo) * (bottom - top)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if plot.title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="15" '
                   f'font-family="sans-serif">{escape(plot.title)}</text>')
    # axes
    out.append(f'<line class="axis" x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>')
    out.append(f'<line class="axis" x1="{left}" y1="{bottom}" x2="{left}" y2="{top}" stroke="black"/>')
    for t in _ticks(x_lo, x_hi):
        X = px(t)
        out.append(f'<line class="tick" x1="{X:.2f}" y1="{bottom}" x2="{X:.2f}" y2="{bottom + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{bottom + 18}" text-anchor="middle" font-size="11" '
                   f'font-family="sans-serif">{t:g}</text>')
    for t in _ticks(y_lo, y_hi):
        Y = py(t)
        out.append(f'<line class="tick" x1="{left - 5}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{Y + 4:.2f}" text-anchor="end" font-size="11" '
                   f'font-family="sans-serif">{t:g}</text>')
    out.append(f'<text x="{(left + right) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" '
               'font-size="12" font-family="sans-serif">Half-normal scores</text>')
    out.append(f'<text x="16" y="{(top + bottom) / 2:.1f}" text-anchor="middle" font-size="12" '
               f'font-family="sans-serif" transform="rotate(-90 16 {(top + bottom) / 2:.1f})">'
               'Absolute residuals</text>')
    # bands
    styles = {"lower": 'stroke-dasharray="none"', "median": 'stroke-dasharray="5,4"',
              "upper": 'stroke-dasharray="none"'}
    for name, arr in zip(("lower", "median", "upper"), ys[1:]):
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x, arr))
        out.append(f'<polyline class="{name}" points="{pts}" fill="none" stroke="#555555" '
                   f'stroke-width="1.2" {styles[name]}/>')
    # observed points
    outside = env.outside if plot.highlight_outside else np.zeros(env.n, dtype=bool)
    for a, b, o in zip(x, ys[0], outside):
        colour = OUTSIDE_COLOUR if o else INSIDE_COLOUR
        cls = "point outside" if o else "point"
        out.append(f'<circle class="{cls}" cx="{_fmt(px(a))}" cy="{_fmt(py(b))}" r="2.5" fill="{colour}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
