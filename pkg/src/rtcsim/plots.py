"""Minimal SVG charts: grouped bars, line plots, empirical CDFs and scatter plots."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")
W, H = 480, 320
MARGIN = dict(left=62, right=16, top=30, bottom=46)


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.1e}"
    return f"{v:.3g}"


class Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str, xlim, ylim, width: int = W, height: int = H):
        self.w, self.h = width, height
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        self.parts: list[str] = []
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.legend: list[tuple[str, str]] = []

    def sx(self, x: float) -> float:
        span = self.w - MARGIN["left"] - MARGIN["right"]
        return MARGIN["left"] + (x - self.x0) / (self.x1 - self.x0) * span

    def sy(self, y: float) -> float:
        span = self.h - MARGIN["top"] - MARGIN["bottom"]
        return self.h - MARGIN["bottom"] - (y - self.y0) / (self.y1 - self.y0) * span

    def axes(self, xticks=True, xtick_labels: Sequence[tuple[float, str]] | None = None) -> None:
        l, b = MARGIN["left"], self.h - MARGIN["bottom"]
        r, t = self.w - MARGIN["right"], MARGIN["top"]
        p = self.parts
        p.append(f'<rect x="{l}" y="{t}" width="{r - l}" height="{b - t}" fill="none" stroke="#333"/>')
        for v in _nice_ticks(self.y0, self.y1):
            y = self.sy(v)
            p.append(f'<line x1="{l}" y1="{y:.1f}" x2="{r}" y2="{y:.1f}" stroke="#ddd"/>')
            p.append(f'<text x="{l - 4}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{_fmt(v)}</text>')
        if xtick_labels is not None:
            for v, label in xtick_labels:
                p.append(f'<text x="{self.sx(v):.1f}" y="{b + 14}" text-anchor="middle" font-size="10">'
                         f'{escape(label)}</text>')
        elif xticks:
            for v in _nice_ticks(self.x0, self.x1):
                x = self.sx(v)
                p.append(f'<text x="{x:.1f}" y="{b + 14}" text-anchor="middle" font-size="10">{_fmt(v)}</text>')
        p.append(f'<text x="{self.w / 2:.0f}" y="18" text-anchor="middle" font-size="13">{escape(self.title)}</text>')
        p.append(f'<text x="{(l + r) / 2:.0f}" y="{self.h - 10}" text-anchor="middle" font-size="11">'
                 f'{escape(self.xlabel)}</text>')
        p.append(f'<text transform="translate(14,{(t + b) / 2:.0f}) rotate(-90)" text-anchor="middle" '
                 f'font-size="11">{escape(self.ylabel)}</text>')

    def polyline(self, pts, color: str, label: str | None = None, step: bool = False) -> None:
        if not pts:
            return
        coords = []
        prev = None
        for x, y in pts:
            if step and prev is not None:
                coords.append(f"{self.sx(x):.1f},{self.sy(prev):.1f}")
            coords.append(f"{self.sx(x):.1f},{self.sy(y):.1f}")
            prev = y
        self.parts.append(f'<polyline points="{" ".join(coords)}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        if label:
            self.legend.append((label, color))

    def circle(self, x: float, y: float, color: str, r: float = 4.0) -> None:
        self.parts.append(f'<circle cx="{self.sx(x):.1f}" cy="{self.sy(y):.1f}" r="{r}" fill="{color}" '
                          f'fill-opacity="0.8"/>')

    def rect(self, x0: float, x1: float, y: float, color: str) -> None:
        top, base = self.sy(max(y, self.y0)), self.sy(max(self.y0, min(0.0, self.y1)))
        ya, yb = min(top, base), max(top, base)
        self.parts.append(f'<rect x="{self.sx(x0):.1f}" y="{ya:.1f}" width="{self.sx(x1) - self.sx(x0):.1f}" '
                          f'height="{yb - ya:.1f}" fill="{color}"/>')

    def render(self) -> str:
        legend = []
        for i, (label, color) in enumerate(self.legend):
            y = MARGIN["top"] + 12 + 14 * i
            x = self.w - MARGIN["right"] - 120
            legend.append(f'<rect x="{x}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
            legend.append(f'<text x="{x + 14}" y="{y + 1}" font-size="10">{escape(label)}</text>')
        body = "\n".join(self.parts + legend)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}" font-family="sans-serif">\n'
                f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def _bounds(vals, pad: float = 0.05, include_zero: bool = False):
    vals = [v for v in vals if v == v and math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if include_zero:
        lo, hi = min(lo, 0.0), max(hi, 0.0)
    span = hi - lo or max(abs(hi), 1.0)
    return lo - pad * span * (not include_zero or lo < 0), hi + pad * span


def bar_panels(summary: dict[str, dict[str, float]], metrics: Sequence[str], title: str = "") -> str:
    """One panel per metric with one bar per controller, stacked vertically."""
    names = list(summary)
    panels = []
    for k, metric in enumerate(metrics):
        vals = [summary[n].get(metric, math.nan) for n in names]
        c = Canvas(f"{title} {metric}".strip(), "", metric, (0, max(len(names), 1)),
                   _bounds(vals, include_zero=True))
        c.axes(xtick_labels=[(i + 0.5, n) for i, n in enumerate(names)])
        for i, v in enumerate(vals):
            if v == v:
                c.rect(i + 0.15, i + 0.85, v, PALETTE[i % len(PALETTE)])
        panels.append(c.render())
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H * len(panels)}">']
    for k, svg in enumerate(panels):
        inner = svg.split("\n", 1)[1].rsplit("</svg>", 1)[0]
        out.append(f'<g transform="translate(0,{H * k})">{inner}</g>')
    out.append("</svg>\n")
    return "\n".join(out)


def line_plot(series: dict[str, Sequence[tuple[float, float]]], title: str, xlabel: str, ylabel: str) -> str:
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    xlim = (min(xs), max(xs)) if xs else (0.0, 1.0)
    c = Canvas(title, xlabel, ylabel, xlim, _bounds(ys))
    c.axes()
    for i, (name, pts) in enumerate(series.items()):
        c.polyline(sorted(pts), PALETTE[i % len(PALETTE)], name)
    return c.render()


def cdf_plot(samples: dict[str, Sequence[float]], title: str, xlabel: str) -> str:
    allv = [v for vals in samples.values() for v in vals]
    c = Canvas(title, xlabel, "CDF", _bounds(allv, pad=0.0), (0.0, 1.0))
    c.axes()
    for i, (name, vals) in enumerate(samples.items()):
        s = sorted(vals)
        n = len(s)
        pts = [(v, (k + 1) / n) for k, v in enumerate(s)]
        if pts:
            pts.insert(0, (s[0], 0.0))
        c.polyline(pts, PALETTE[i % len(PALETTE)], name, step=True)
    return c.render()


def scatter_plot(points: Sequence[tuple[float, float, str]], title: str, xlabel: str, ylabel: str) -> str:
    labels = list(dict.fromkeys(p[2] for p in points))
    c = Canvas(title, xlabel, ylabel, _bounds([p[0] for p in points]), _bounds([p[1] for p in points]))
    c.axes()
    for x, y, label in points:
        c.circle(x, y, PALETTE[labels.index(label) % len(PALETTE)])
    c.legend = [(lab, PALETTE[i % len(PALETTE)]) for i, lab in enumerate(labels)]
    return c.render()


def write(svg: str, path) -> Path:
    path = Path(path)
    path.write_text(svg)
    return path
