"""A small SVG 1.1 chart writer: axes, polyline series with markers, a legend."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

__all__ = ["Series", "Panel", "render_panels"]

_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass
class Series:
    """Points of one quantity; ``segments`` lists index runs joined by lines."""

    name: str
    points: list
    segments: list = field(default_factory=list)


@dataclass
class Panel:
    title: str
    x_label: str
    y_label: str
    series: list
    log_x: bool = False


def _extent(values):
    lo, hi = min(values), max(values)
    if lo == hi:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _panel(panel: Panel, x0: float, width: float, height: float, margin: float) -> list:
    pts = [p for s in panel.series for p in s.points if all(map(math.isfinite, p))]
    if not pts:
        return [f'<text x="{x0 + width / 2:.1f}" y="{height / 2:.1f}">no data</text>']

    def tx(x):
        return math.log10(x) if panel.log_x else x

    xs = [tx(p[0]) for p in pts]
    ys = [p[1] for p in pts]
    xlo, xhi = _extent(xs)
    ylo, yhi = _extent(ys)
    left, right = x0 + margin, x0 + width - margin / 2
    top, bottom = margin, height - margin

    def px(x):
        return left + (tx(x) - xlo) / (xhi - xlo) * (right - left)

    def py(y):
        return bottom - (y - ylo) / (yhi - ylo) * (bottom - top)

    out = [
        f'<g class="panel">',
        f'<text x="{(left + right) / 2:.1f}" y="{top - 12:.1f}" text-anchor="middle">{escape(panel.title)}</text>',
        f'<line x1="{left:.1f}" y1="{bottom:.1f}" x2="{right:.1f}" y2="{bottom:.1f}" stroke="black"/>',
        f'<line x1="{left:.1f}" y1="{top:.1f}" x2="{left:.1f}" y2="{bottom:.1f}" stroke="black"/>',
        f'<text x="{(left + right) / 2:.1f}" y="{bottom + 32:.1f}" text-anchor="middle">{escape(panel.x_label)}</text>',
        f'<text x="{left - 40:.1f}" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 {left - 40:.1f} {(top + bottom) / 2:.1f})">{escape(panel.y_label)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        yv = ylo + frac * (yhi - ylo)
        out.append(f'<text x="{left - 4:.1f}" y="{py(yv) + 4:.1f}" text-anchor="end" font-size="10">{_fmt(yv)}</text>')
        xv = xlo + frac * (xhi - xlo)
        label = 10 ** xv if panel.log_x else xv
        out.append(f'<text x="{left + frac * (right - left):.1f}" y="{bottom + 14:.1f}" text-anchor="middle" '
                   f'font-size="10">{_fmt(label)}</text>')
    for i, s in enumerate(panel.series):
        colour = _COLOURS[i % len(_COLOURS)]
        for seg in s.segments:
            coords = " ".join(f"{px(s.points[j][0]):.2f},{py(s.points[j][1]):.2f}" for j in seg
                              if all(map(math.isfinite, s.points[j])))
            out.append(f'<polyline fill="none" stroke="{colour}" points="{coords}"/>')
        for x, y in s.points:
            if math.isfinite(x) and math.isfinite(y):
                out.append(f'<circle class="marker" data-series="{escape(s.name)}" cx="{px(x):.2f}" '
                           f'cy="{py(y):.2f}" r="3" fill="{colour}"/>')
        ly = top + 14 * i
        out.append(f'<rect x="{right - 90:.1f}" y="{ly:.1f}" width="10" height="10" fill="{colour}"/>')
        out.append(f'<text x="{right - 76:.1f}" y="{ly + 9:.1f}" font-size="11">{escape(s.name)}</text>')
    out.append("</g>")
    return out


def render_panels(panels: list, panel_width: int = 420, height: int = 320) -> str:
    """Side-by-side panels as one SVG document."""
    width = panel_width * len(panels)
    body = []
    for i, panel in enumerate(panels):
        body.extend(_panel(panel, i * panel_width, panel_width, height, 60.0))
    head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
            f'font-family="sans-serif" font-size="12">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"
