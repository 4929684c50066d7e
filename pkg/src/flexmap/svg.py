"""Minimal deterministic SVG plots of PQ regions.

Output depends only on the inputs: coordinates are rounded to fixed
precision and no timestamps or ids are emitted, so the same regions always
produce the same bytes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

GRAY = "#b0b0b0"
HIGHLIGHT = "#d62728"
PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf"]


@dataclass
class Layer:
    polygon: np.ndarray  # (k, 2) of (p, q) in p.u.
    label: str
    fill: str = GRAY
    stroke: str = "#606060"
    opacity: float = 0.35


def _nice_step(span, target=6):
    if span <= 0:
        return 1.0
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 5, 10):
        if m * mag >= raw:
            return m * mag
    return 10 * mag


def _fmt(v):
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _ticks(lo, hi):
    step = _nice_step(hi - lo)
    first = math.ceil(lo / step - 1e-9)
    out = []
    k = first
    while k * step <= hi + 1e-9 * step:
        out.append(k * step)
        k += 1
    return out, step


def render(layers, *, base_mva=1.0, title="", width=640, height=480) -> str:
    """SVG document with the layers drawn in order (later on top), axes in MW / MVAr."""
    left, right, top, bottom = 70, 160, 40, 55
    pw, ph = width - left - right, height - top - bottom
    pts = [np.asarray(layer.polygon, float) * base_mva for layer in layers if len(layer.polygon)]
    if pts:
        allp = np.vstack(pts)
        x0, x1 = float(allp[:, 0].min()), float(allp[:, 0].max())
        y0, y1 = float(allp[:, 1].min()), float(allp[:, 1].max())
    else:
        x0, x1, y0, y1 = -1.0, 1.0, -1.0, 1.0
    padx = 0.05 * (x1 - x0) or 1.0
    pady = 0.05 * (y1 - y0) or 1.0
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (y1 - y) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{left}" y="{top - 15}" font-size="13">{escape(title)}</text>')
    xt, _ = _ticks(x0, x1)
    yt, _ = _ticks(y0, y1)
    for x in xt:
        out.append(f'<line x1="{sx(x):.2f}" y1="{top}" x2="{sx(x):.2f}" y2="{top + ph}" stroke="#eeeeee"/>')
        out.append(f'<text x="{sx(x):.2f}" y="{top + ph + 16}" text-anchor="middle">{_fmt(x)}</text>')
    for y in yt:
        out.append(f'<line x1="{left}" y1="{sy(y):.2f}" x2="{left + pw}" y2="{sy(y):.2f}" stroke="#eeeeee"/>')
        out.append(f'<text x="{left - 6}" y="{sy(y) + 4:.2f}" text-anchor="end">{_fmt(y)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 15}" text-anchor="middle">p [MW]</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {top + ph / 2:.2f})">q [MVAr]</text>')
    for i, layer in enumerate(layers):
        poly = np.asarray(layer.polygon, float) * base_mva
        if len(poly):
            path = " ".join(f"{sx(p):.2f},{sy(q):.2f}" for p, q in poly)
            out.append(f'<polygon points="{path}" fill="{layer.fill}" fill-opacity="{layer.opacity:.2f}" '
                       f'stroke="{layer.stroke}" stroke-width="1.2"/>')
        ly = top + 14 + 16 * i
        out.append(f'<rect x="{left + pw + 12}" y="{ly - 9}" width="12" height="10" fill="{layer.fill}" '
                   f'stroke="{layer.stroke}"/>')
        out.append(f'<text x="{left + pw + 30}" y="{ly}">{escape(layer.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
