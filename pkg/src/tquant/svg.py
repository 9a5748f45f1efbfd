"""Minimal SVG line and bar charts for reports."""

from __future__ import annotations

import math
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=40, bottom=50)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<text x="{MARGIN["left"] + _pw() / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text transform="translate(16 {MARGIN["top"] + _ph() / 2}) rotate(-90)" '
        f'text-anchor="middle">{escape(ylabel)}</text>',
    ]


def _pw() -> float:
    return WIDTH - MARGIN["left"] - MARGIN["right"]


def _ph() -> float:
    return HEIGHT - MARGIN["top"] - MARGIN["bottom"]


def _span(lo: float, hi: float) -> tuple[float, float]:
    if hi <= lo:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    return lo, hi


def _axes(x_range, y_range, logy: bool) -> list[str]:
    left, top = MARGIN["left"], MARGIN["top"]
    out = [f'<rect x="{left}" y="{top}" width="{_pw()}" height="{_ph()}" fill="none" stroke="black"/>']
    for i in range(5):
        fx = i / 4
        xv = x_range[0] + fx * (x_range[1] - x_range[0])
        x = left + fx * _pw()
        out.append(f'<text x="{x:.1f}" y="{top + _ph() + 16}" text-anchor="middle">{xv:.3g}</text>')
        yv = y_range[0] + fx * (y_range[1] - y_range[0])
        y = top + _ph() - fx * _ph()
        label = f"{10 ** yv:.3g}" if logy else f"{yv:.3g}"
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{label}</text>')
    return out


def _legend(names: Sequence[str]) -> list[str]:
    x0 = WIDTH - MARGIN["right"] + 12
    out = []
    for i, name in enumerate(names):
        y = MARGIN["top"] + 14 + 18 * i
        col = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{x0}" y="{y - 9}" width="12" height="10" fill="{col}"/>')
        out.append(f'<text x="{x0 + 18}" y="{y}">{escape(name)}</text>')
    return out


def line_chart(series: Mapping[str, tuple[Sequence[float], Sequence[float]]], title: str = "",
               xlabel: str = "", ylabel: str = "", logy: bool = False) -> str:
    """Polyline per series with point markers; ``logy`` plots log10 of y."""
    pts = {}
    for name, (xs, ys) in series.items():
        pairs = [(float(x), float(y)) for x, y in zip(xs, ys)
                 if math.isfinite(x) and math.isfinite(y) and (not logy or y > 0)]
        pts[name] = sorted((x, math.log10(y) if logy else y) for x, y in pairs)
    allx = [x for p in pts.values() for x, _ in p] or [0.0]
    ally = [y for p in pts.values() for _, y in p] or [0.0]
    xr, yr = _span(min(allx), max(allx)), _span(min(ally), max(ally))

    def sx(x):
        return MARGIN["left"] + (x - xr[0]) / (xr[1] - xr[0]) * _pw()

    def sy(y):
        return MARGIN["top"] + _ph() - (y - yr[0]) / (yr[1] - yr[0]) * _ph()

    out = _frame(title, xlabel, ylabel) + _axes(xr, yr, logy)
    for i, (name, p) in enumerate(pts.items()):
        col = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in p)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{col}" stroke-width="2"/>')
        out.extend(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{col}"/>' for x, y in p)
    out += _legend(list(pts)) + ["</svg>"]
    return "\n".join(out) + "\n"


def bar_chart(categories: Sequence[str], series: Mapping[str, Sequence[float]], title: str = "",
              ylabel: str = "") -> str:
    """Grouped bars, one group per category."""
    vals = [float(v) for vs in series.values() for v in vs if math.isfinite(float(v))] or [0.0]
    yr = _span(min(0.0, min(vals)), max(0.0, max(vals)))

    def sy(y):
        return MARGIN["top"] + _ph() - (y - yr[0]) / (yr[1] - yr[0]) * _ph()

    axes = _axes((0, len(categories)), yr, False)
    out = _frame(title, "", ylabel) + axes[:1] + axes[2::2]  # frame and y tick labels only
    group = _pw() / max(1, len(categories))
    width = 0.8 * group / max(1, len(series))
    for c, cat in enumerate(categories):
        x0 = MARGIN["left"] + c * group + 0.1 * group
        out.append(f'<text x="{x0 + 0.4 * group:.1f}" y="{MARGIN["top"] + _ph() + 16}" '
                   f'text-anchor="middle">{escape(str(cat))}</text>')
        for s, (name, vs) in enumerate(series.items()):
            v = float(vs[c])
            if not math.isfinite(v):
                continue
            y0, y1 = sorted((sy(0.0), sy(v)))
            out.append(f'<rect x="{x0 + s * width:.1f}" y="{y0:.1f}" width="{width:.1f}" '
                       f'height="{y1 - y0:.1f}" fill="{PALETTE[s % len(PALETTE)]}"/>')
    out += _legend(list(series)) + ["</svg>"]
    return "\n".join(out) + "\n"


def write_svg(path: str, svg: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
