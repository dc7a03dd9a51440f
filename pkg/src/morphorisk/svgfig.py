"""Hand-rolled SVG figures built from primitives.

No plotting dependency: every figure is assembled from lines, rects,
polylines, and text with fixed coordinate formatting, so output files
are deterministic and diff-stable.
"""
from __future__ import annotations

import math

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f")
FONT = "font-family=\"Helvetica,Arial,sans-serif\""


def _n(x) -> str:
    return "%.2f" % float(x)


class Canvas:
    """Minimal SVG assembler with a margin-inset data viewport."""

    def __init__(self, width=640, height=420,
                 margin=(60, 20, 45, 20)):  # left, right, bottom, top
        self.width = width
        self.height = height
        self.ml, self.mr, self.mb, self.mt = margin
        self.parts = []
        self.xlim = (0.0, 1.0)
        self.ylim = (0.0, 1.0)

    def set_limits(self, xlim, ylim):
        if xlim[0] == xlim[1]:
            xlim = (xlim[0] - 0.5, xlim[1] + 0.5)
        if ylim[0] == ylim[1]:
            ylim = (ylim[0] - 0.5, ylim[1] + 0.5)
        self.xlim, self.ylim = xlim, ylim

    def px(self, x):
        lo, hi = self.xlim
        frac = (x - lo) / (hi - lo)
        return self.ml + frac * (self.width - self.ml - self.mr)

    def py(self, y):
        lo, hi = self.ylim
        frac = (y - lo) / (hi - lo)
        return self.height - self.mb - frac * (self.height - self.mb
                                               - self.mt)

    def line(self, x1, y1, x2, y2, color="#000", width=1.0, dash=None):
        d = f" stroke-dasharray=\"{dash}\"" if dash else ""
        self.parts.append(
            f"<line x1=\"{_n(x1)}\" y1=\"{_n(y1)}\" x2=\"{_n(x2)}\" "
            f"y2=\"{_n(y2)}\" stroke=\"{color}\" "
            f"stroke-width=\"{_n(width)}\"{d}/>")

    def rect(self, x, y, w, h, fill, opacity=None, stroke="none"):
        o = f" fill-opacity=\"{_n(opacity)}\"" if opacity is not None else ""
        self.parts.append(
            f"<rect x=\"{_n(x)}\" y=\"{_n(y)}\" width=\"{_n(w)}\" "
            f"height=\"{_n(h)}\" fill=\"{fill}\" stroke=\"{stroke}\"{o}/>")

    def polyline(self, pts, color, width=1.5):
        path = " ".join(f"{_n(x)},{_n(y)}" for x, y in pts)
        self.parts.append(
            f"<polyline points=\"{path}\" fill=\"none\" "
            f"stroke=\"{color}\" stroke-width=\"{_n(width)}\"/>")

    def polygon(self, pts, fill, opacity=0.18):
        path = " ".join(f"{_n(x)},{_n(y)}" for x, y in pts)
        self.parts.append(
            f"<polygon points=\"{path}\" fill=\"{fill}\" "
            f"fill-opacity=\"{_n(opacity)}\" stroke=\"none\"/>")

    def text(self, x, y, s, size=11, anchor="start", color="#000",
             rotate=None):
        r = (f" transform=\"rotate({_n(rotate)} {_n(x)} {_n(y)})\""
             if rotate is not None else "")
        self.parts.append(
            f"<text x=\"{_n(x)}\" y=\"{_n(y)}\" font-size=\"{size}\" "
            f"text-anchor=\"{anchor}\" fill=\"{color}\" {FONT}{r}>"
            f"{escape(s)}</text>")

    def axes(self, xlabel="", ylabel="", x_ticks=(), y_ticks=()):
        x0, y0 = self.ml, self.height - self.mb
        x1, y1 = self.width - self.mr, self.mt
        self.line(x0, y0, x1, y0)
        self.line(x0, y0, x0, y1)
        for t in x_ticks:
            px = self.px(t)
            self.line(px, y0, px, y0 + 4)
            self.text(px, y0 + 16, "%.6g" % t, size=10, anchor="middle")
        for t in y_ticks:
            py = self.py(t)
            self.line(x0 - 4, py, x0, py)
            self.text(x0 - 7, py + 3.5, "%.6g" % t, size=10, anchor="end")
        if xlabel:
            self.text((x0 + x1) / 2, self.height - 8, xlabel,
                      anchor="middle")
        if ylabel:
            self.text(14, (y0 + y1) / 2, ylabel, anchor="middle",
                      rotate=-90)

    def render(self) -> str:
        head = (f"<svg xmlns=\"http://www.w3.org/2000/svg\" "
                f"width=\"{self.width}\" height=\"{self.height}\" "
                f"viewBox=\"0 0 {self.width} {self.height}\">")
        return "\n".join([head, *self.parts, "</svg>"]) + "\n"


def escape(s) -> str:
    return (str(s).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(round(t, 10))
        t += step
    return out


def km_figure(curves, title="", xlabel="days", ylabel="survival") -> str:
    """Step curves for named Kaplan-Meier estimates.

    ``curves`` is a list of (label, times, survival) triples; each curve
    starts at S(0)=1 and steps down at its event times.
    """
    c = Canvas()
    tmax = max((float(t[-1]) for _, t, _ in curves if len(t)), default=1.0)
    c.set_limits((0.0, tmax * 1.02), (0.0, 1.02))
    c.axes(xlabel, ylabel, _ticks(0, tmax), [0.0, 0.25, 0.5, 0.75, 1.0])
    for i, (label, times, surv) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        pts = [(c.px(0.0), c.py(1.0))]
        prev = 1.0
        for t, s in zip(times, surv):
            pts.append((c.px(t), c.py(prev)))
            pts.append((c.px(t), c.py(s)))
            prev = s
        pts.append((c.px(tmax), c.py(prev)))
        c.polyline(pts, color)
        c.text(c.width - c.mr - 150, c.mt + 16 + 14 * i, label,
               color=color)
    if title:
        c.text(c.width / 2, 14, title, anchor="middle", size=13)
    return c.render()


def heatmap_figure(values, row_labels, col_labels, title="") -> str:
    """Grid heatmap (e.g. screening AUC by metric and level); NaN cells
    render grey."""
    values = np.asarray(values, dtype=np.float64)
    nr, nc = values.shape
    cw, ch = 46, 16
    c = Canvas(width=140 + nc * cw + 30, height=60 + nr * ch + 20,
               margin=(0, 0, 0, 0))
    finite = values[np.isfinite(values)]
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 1.0
    span = (hi - lo) or 1.0
    for i in range(nr):
        for j in range(nc):
            v = values[i, j]
            x, y = 140 + j * cw, 50 + i * ch
            if np.isfinite(v):
                frac = (v - lo) / span
                r = int(round(255 * frac))
                b = int(round(255 * (1 - frac)))
                c.rect(x, y, cw - 1, ch - 1, f"rgb({r},80,{b})")
                c.text(x + cw / 2 - 0.5, y + ch - 4.5, "%.2f" % v,
                       size=8, anchor="middle", color="#fff")
            else:
                c.rect(x, y, cw - 1, ch - 1, "#cccccc")
    for i, lab in enumerate(row_labels):
        c.text(134, 50 + i * ch + ch - 4.5, lab, size=9, anchor="end")
    for j, lab in enumerate(col_labels):
        c.text(140 + j * cw + cw / 2, 44, lab, size=9, anchor="middle")
    if title:
        c.text(c.width / 2, 20, title, anchor="middle", size=13)
    return c.render()


def bar_figure(labels, values, intervals=None, title="",
               ylabel="") -> str:
    """Bar chart with optional CI whiskers."""
    c = Canvas()
    n = len(labels)
    hi = max([v for v in values]
             + ([iv[1] for iv in intervals] if intervals else []) + [0.0])
    c.set_limits((0.0, float(n)), (0.0, hi * 1.1 if hi else 1.0))
    c.axes("", ylabel, [], _ticks(0, hi * 1.1 if hi else 1.0))
    for i, (lab, v) in enumerate(zip(labels, values)):
        x0 = c.px(i + 0.15)
        x1 = c.px(i + 0.85)
        c.rect(x0, c.py(v), x1 - x0, c.py(0) - c.py(v),
               PALETTE[i % len(PALETTE)], opacity=0.8)
        if intervals is not None:
            lo_v, hi_v = intervals[i]
            xm = c.px(i + 0.5)
            c.line(xm, c.py(lo_v), xm, c.py(hi_v))
            c.line(xm - 5, c.py(lo_v), xm + 5, c.py(lo_v))
            c.line(xm - 5, c.py(hi_v), xm + 5, c.py(hi_v))
        c.text(c.px(i + 0.5), c.height - c.mb + 16, lab, size=9,
               anchor="middle")
    if title:
        c.text(c.width / 2, 14, title, anchor="middle", size=13)
    return c.render()


def sweep_figure(xs, series, xlabel="threshold", ylabel="", title="",
                 vline=None) -> str:
    """Line plot of one or more named series over a shared x grid."""
    c = Canvas()
    all_y = [y for _, ys in series for y in ys if np.isfinite(y)]
    ylo = min(all_y + [0.0])
    yhi = max(all_y + [1e-9])
    c.set_limits((float(min(xs)), float(max(xs))),
                 (ylo, yhi + 0.05 * (yhi - ylo or 1.0)))
    c.axes(xlabel, ylabel, _ticks(min(xs), max(xs)),
           _ticks(ylo, yhi))
    if vline is not None:
        c.line(c.px(vline), c.py(c.ylim[0]), c.px(vline),
               c.py(c.ylim[1]), color="#999", dash="4,3")
    for i, (label, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = [(c.px(x), c.py(y)) for x, y in zip(xs, ys)
               if np.isfinite(y)]
        if pts:
            c.polyline(pts, color)
        c.text(c.width - c.mr - 150, c.mt + 16 + 14 * i, label,
               color=color)
    if title:
        c.text(c.width / 2, 14, title, anchor="middle", size=13)
    return c.render()
