"""Minimal SVG line charts (axes, ticks, legend) written without a plotting library."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")

WIDTH, HEIGHT = 720, 420
MARGIN = dict(left=80, right=170, top=40, bottom=55)


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    dashed: bool = False
    color: Optional[str] = None


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


def _label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e5 or abs(v) < 1e-3:
        return f"{v:.0e}"
    return f"{v:g}"


def line_chart(series: Sequence[Series], title: str, xlabel: str, ylabel: str, logy: bool = False) -> str:
    """SVG document with one polyline per series.

    With ``logy`` nonpositive values are dropped and the axis shows decades.
    """
    plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
    plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    pts = []
    for s in series:
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if logy:
            keep &= y > 0
            y = np.where(keep, np.log10(np.where(keep, y, 1.0)), np.nan)
        pts.append((x[keep], y[keep]))
    xs = np.concatenate([p[0] for p in pts]) if pts else np.zeros(0)
    ys = np.concatenate([p[1] for p in pts]) if pts else np.zeros(0)
    xlo, xhi = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    ylo, yhi = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if logy:
        ylo, yhi = math.floor(ylo), math.ceil(yhi)
    if yhi - ylo < 1e-12 * max(1.0, abs(yhi)):
        ylo, yhi = ylo - 0.5, yhi + 0.5
    if xhi <= xlo:
        xhi = xlo + 1.0
    if not logy:
        pad = 0.05 * (yhi - ylo)
        ylo, yhi = ylo - pad, yhi + pad

    def px(v):
        return MARGIN["left"] + (v - xlo) / (xhi - xlo) * plot_w

    def py(v):
        return MARGIN["top"] + (yhi - v) / (yhi - ylo) * plot_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{MARGIN["left"] + plot_w / 2:.1f}" y="22" text-anchor="middle" font-size="15">'
           f'{escape(title)}</text>']
    # axes and ticks
    x0, y0 = MARGIN["left"], MARGIN["top"] + plot_h
    out.append(f'<rect x="{x0}" y="{MARGIN["top"]}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>')
    for v in _nice_ticks(xlo, xhi):
        if xlo <= v <= xhi:
            out.append(f'<line x1="{px(v):.2f}" y1="{y0}" x2="{px(v):.2f}" y2="{y0 + 5}" stroke="black"/>')
            out.append(f'<text x="{px(v):.2f}" y="{y0 + 19}" text-anchor="middle">{_label(v)}</text>')
    yt = [float(k) for k in range(int(ylo), int(yhi) + 1)] if logy else _nice_ticks(ylo, yhi)
    for v in yt:
        if ylo <= v <= yhi:
            text = f"1e{int(v)}" if logy else _label(v)
            out.append(f'<line x1="{x0 - 5}" y1="{py(v):.2f}" x2="{x0 + plot_w}" y2="{py(v):.2f}" '
                       f'stroke="#dddddd"/>')
            out.append(f'<text x="{x0 - 8}" y="{py(v) + 4:.2f}" text-anchor="end">{text}</text>')
    out.append(f'<text x="{x0 + plot_w / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{MARGIN["top"] + plot_h / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {MARGIN["top"] + plot_h / 2:.1f})">{escape(ylabel)}</text>')
    # data and legend
    for k, (s, (x, y)) in enumerate(zip(series, pts)):
        color = s.color or PALETTE[k % len(PALETTE)]
        dash = ' stroke-dasharray="6 4"' if s.dashed else ""
        if x.size:
            path = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{path}"/>')
        ly = MARGIN["top"] + 14 + 18 * k
        lx = WIDTH - MARGIN["right"] + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 30}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, svg: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(svg)
