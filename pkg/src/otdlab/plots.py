"""Deterministic SVG charts.

Hand-rolled on purpose: byte-stable output (no timestamps, no library
version drift) makes the artifacts diffable in tests. Two chart kinds
cover the package's needs: metric-vs-step training curves and 2-D sample
scatters.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 62, 18, 34, 46

PALETTE = ["#1f6feb", "#d29922", "#2da44e", "#cf222e", "#8250df", "#bf3989",
           "#57606a", "#0a7ea4"]

_BG = ("<rect x='0' y='0' width='%d' height='%d' fill='#ffffff'/>"
       % (WIDTH, HEIGHT))


def _finite_range(values, fallback=(0.0, 1.0)):
    vals = [float(v) for v in values if v is not None and np.isfinite(v)]
    if not vals:
        return fallback
    lo, hi = min(vals), max(vals)
    if lo == hi:
        pad = 0.5 if lo == 0.0 else abs(lo) * 0.1
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt(v):
    return f"{v:.4g}"


class _Canvas:
    """Maps data coordinates into the plot rectangle and accumulates SVG."""

    def __init__(self, xlim, ylim, title, xlabel, ylabel):
        self.xlim, self.ylim = xlim, ylim
        self.parts = [
            f"<svg xmlns='http://www.w3.org/2000/svg' width='{WIDTH}' "
            f"height='{HEIGHT}' viewBox='0 0 {WIDTH} {HEIGHT}' "
            f"font-family='sans-serif'>",
            _BG,
        ]
        if title:
            self.parts.append(
                f"<text x='{WIDTH / 2:.1f}' y='20' text-anchor='middle' "
                f"font-size='14'>{escape(title)}</text>")
        self._axes(xlabel, ylabel)

    def x(self, v):
        lo, hi = self.xlim
        return MARGIN_L + (v - lo) / (hi - lo) * (WIDTH - MARGIN_L - MARGIN_R)

    def y(self, v):
        lo, hi = self.ylim
        return HEIGHT - MARGIN_B - (v - lo) / (hi - lo) * (HEIGHT - MARGIN_T - MARGIN_B)

    def _axes(self, xlabel, ylabel):
        x0, x1 = MARGIN_L, WIDTH - MARGIN_R
        y0, y1 = HEIGHT - MARGIN_B, MARGIN_T
        add = self.parts.append
        add(f"<line x1='{x0}' y1='{y0}' x2='{x1}' y2='{y0}' stroke='#57606a'/>")
        add(f"<line x1='{x0}' y1='{y0}' x2='{x0}' y2='{y1}' stroke='#57606a'/>")
        for v in _ticks(*self.xlim):
            px = self.x(v)
            add(f"<line x1='{px:.1f}' y1='{y0}' x2='{px:.1f}' y2='{y0 + 4}' "
                f"stroke='#57606a'/>")
            add(f"<text x='{px:.1f}' y='{y0 + 17}' text-anchor='middle' "
                f"font-size='10'>{_fmt(v)}</text>")
        for v in _ticks(*self.ylim):
            py = self.y(v)
            add(f"<line x1='{x0 - 4}' y1='{py:.1f}' x2='{x0}' y2='{py:.1f}' "
                f"stroke='#57606a'/>")
            add(f"<text x='{x0 - 7}' y='{py + 3:.1f}' text-anchor='end' "
                f"font-size='10'>{_fmt(v)}</text>")
        if xlabel:
            add(f"<text x='{(x0 + x1) / 2:.1f}' y='{HEIGHT - 10}' "
                f"text-anchor='middle' font-size='11'>{escape(xlabel)}</text>")
        if ylabel:
            add(f"<text x='16' y='{(y0 + y1) / 2:.1f}' text-anchor='middle' "
                f"font-size='11' transform='rotate(-90 16 {(y0 + y1) / 2:.1f})'>"
                f"{escape(ylabel)}</text>")

    def legend(self, names, marker="line"):
        x = WIDTH - MARGIN_R - 150
        for i, name in enumerate(names):
            y = MARGIN_T + 14 + 16 * i
            color = PALETTE[i % len(PALETTE)]
            if marker == "line":
                self.parts.append(f"<line x1='{x}' y1='{y - 4}' x2='{x + 18}' "
                                  f"y2='{y - 4}' stroke='{color}' stroke-width='2'/>")
            else:
                self.parts.append(f"<circle cx='{x + 9}' cy='{y - 4}' r='4' "
                                  f"fill='{color}'/>")
            self.parts.append(f"<text x='{x + 24}' y='{y}' font-size='11'>"
                              f"{escape(str(name))}</text>")

    def render(self):
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def svg_line_chart(series, title="", xlabel="step", ylabel="") -> str:
    """series: list of (name, xs, ys). Points with None/NaN y are skipped.
    An empty list still renders axes (the valid-but-empty CSV case)."""
    cleaned = []
    for name, xs, ys in series:
        pts = [(float(x), float(y)) for x, y in zip(xs, ys)
               if y is not None and np.isfinite(y)]
        cleaned.append((name, pts))

    xlim = _finite_range([x for _, pts in cleaned for x, _ in pts])
    ylim = _finite_range([y for _, pts in cleaned for _, y in pts])
    canvas = _Canvas(xlim, ylim, title, xlabel, ylabel)
    for i, (name, pts) in enumerate(cleaned):
        if not pts:
            continue
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{canvas.x(x):.2f},{canvas.y(y):.2f}" for x, y in pts)
        canvas.parts.append(f"<polyline points='{coords}' fill='none' "
                            f"stroke='{color}' stroke-width='1.5'/>")
    if cleaned:
        canvas.legend([name for name, _ in cleaned], marker="line")
    return canvas.render()


def svg_scatter(clouds, title="", xlabel="", ylabel="") -> str:
    """clouds: list of (name, (N, 2) array). Axes share one square data range
    so geometry is not distorted."""
    pts_all = [np.asarray(c, np.float64) for _, c in clouds if len(c)]
    if pts_all:
        allpts = np.vstack(pts_all)
        xlo, xhi = _finite_range(allpts[:, 0])
        ylo, yhi = _finite_range(allpts[:, 1])
        span = max(xhi - xlo, yhi - ylo)
        xc, yc = (xlo + xhi) / 2, (ylo + yhi) / 2
        xlim = (xc - span / 2, xc + span / 2)
        ylim = (yc - span / 2, yc + span / 2)
    else:
        xlim = ylim = (0.0, 1.0)
    canvas = _Canvas(xlim, ylim, title, xlabel, ylabel)
    for i, (name, cloud) in enumerate(clouds):
        color = PALETTE[i % len(PALETTE)]
        for row in np.asarray(cloud, np.float64):
            canvas.parts.append(f"<circle cx='{canvas.x(row[0]):.2f}' "
                                f"cy='{canvas.y(row[1]):.2f}' r='2.5' "
                                f"fill='{color}' fill-opacity='0.65'/>")
    if clouds:
        canvas.legend([name for name, _ in clouds], marker="dot")
    return canvas.render()
