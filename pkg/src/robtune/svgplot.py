"""Dependency-free SVG line charts for ablation summaries.

Output is plain deterministic text (fixed precision, sorted series), so
re-rendering from identical inputs is byte-identical and diffs stay
readable.
"""

from __future__ import annotations

import math

_COLORS = ("#d95f02", "#1b9e77", "#7570b3", "#e7298a", "#66a61e")
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 40, 55


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _xpos(v, lo, hi, log_x):
    if log_x:
        v, lo, hi = math.log10(v), math.log10(lo), math.log10(hi)
    frac = 0.5 if hi == lo else (v - lo) / (hi - lo)
    return _ML + frac * (_W - _ML - _MR)


def _ypos(v):
    return _MT + (1.0 - v) * (_H - _MT - _MB)


def line_chart(x_values, series: dict, title: str, x_label: str,
               log_x: bool = False) -> str:
    """Render series of values in [0, 1] against shared x positions.

    ``series`` maps a name to a list of y values (None entries are
    skipped). Returns the SVG document as a string.
    """
    xs = list(x_values)
    lo, hi = min(xs), max(xs)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="monospace" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    # frame and y grid
    for i in range(6):
        y = i / 5.0
        py = _ypos(y)
        parts.append(f'<line x1="{_ML}" y1="{_fmt(py)}" x2="{_W - _MR}" y2="{_fmt(py)}" '
                     f'stroke="#dddddd"/>')
        parts.append(f'<text x="{_ML - 8}" y="{_fmt(py + 4)}" text-anchor="end">{y:.1f}</text>')
    # x ticks at the data points
    for v in xs:
        px = _xpos(v, lo, hi, log_x)
        parts.append(f'<line x1="{_fmt(px)}" y1="{_ypos(0.0):.2f}" x2="{_fmt(px)}" '
                     f'y2="{_ypos(0.0) + 5:.2f}" stroke="#333333"/>')
        parts.append(f'<text x="{_fmt(px)}" y="{_ypos(0.0) + 20:.2f}" text-anchor="middle">{v:g}</text>')
    parts.append(f'<text x="{_W // 2}" y="{_H - 12}" text-anchor="middle">{x_label}</text>')

    for idx, name in enumerate(sorted(series)):
        color = _COLORS[idx % len(_COLORS)]
        points = [(x, y) for x, y in zip(xs, series[name]) if y is not None]
        if not points:
            continue
        path = " ".join(f"{_fmt(_xpos(x, lo, hi, log_x))},{_fmt(_ypos(y))}" for x, y in points)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{path}"/>')
        for x, y in points:
            parts.append(f'<circle cx="{_fmt(_xpos(x, lo, hi, log_x))}" '
                         f'cy="{_fmt(_ypos(y))}" r="3" fill="{color}"/>')
        ly = _MT + 16 * idx
        parts.append(f'<rect x="{_W - _MR - 110}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{_W - _MR - 95}" y="{ly}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
