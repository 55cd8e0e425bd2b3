"""
Minimal SVG line charts for dissipation histories and Reynolds sweeps.

The output is plain SVG 1.1 built with :mod:`xml.etree`, so it diffs cleanly
and needs no rendering library.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np

SVG_NS = "http://www.w3.org/2000/svg"
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

PANEL_W, PANEL_H = 480, 320
MARGIN = 56


def _range(values, log=False):
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if log:
        v = np.log10(v[v > 0])
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi - lo < 1e-12 * max(1.0, abs(hi)):
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


class Panel:
    """One set of axes with polyline series in data coordinates."""

    def __init__(self, title, xlabel, ylabel, logx=False):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.logx = logx
        self.lines: list[tuple[str, np.ndarray, np.ndarray, bool]] = []

    def add(self, label, x, y, markers=False):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("x and y must be 1-d arrays of equal length")
        self.lines.append((label, x, y, markers))
        return self

    def render(self, parent, x0, y0):
        g = ET.SubElement(parent, "g", transform=f"translate({x0},{y0})")
        xs = np.concatenate([ln[1] for ln in self.lines]) if self.lines else np.zeros(0)
        ys = np.concatenate([ln[2] for ln in self.lines]) if self.lines else np.zeros(0)
        xlo, xhi = _range(xs, self.logx)
        ylo, yhi = _range(ys)
        w, h = PANEL_W - 2 * MARGIN, PANEL_H - 2 * MARGIN

        def to_px(x, y):
            xx = np.log10(x) if self.logx else x
            return MARGIN + (xx - xlo) / (xhi - xlo) * w, MARGIN + (yhi - y) / (yhi - ylo) * h

        ET.SubElement(g, "rect", x=str(MARGIN), y=str(MARGIN), width=str(w), height=str(h),
                      fill="none", stroke="black")
        ET.SubElement(g, "text", x=str(PANEL_W / 2), y=str(MARGIN / 2),
                      **{"text-anchor": "middle", "font-size": "14"}).text = self.title
        ET.SubElement(g, "text", x=str(PANEL_W / 2), y=str(PANEL_H - 12),
                      **{"text-anchor": "middle", "font-size": "12"}).text = self.xlabel
        ET.SubElement(g, "text", x="14", y=str(PANEL_H / 2),
                      transform=f"rotate(-90 14 {PANEL_H / 2})",
                      **{"text-anchor": "middle", "font-size": "12"}).text = self.ylabel
        for frac in (0.0, 0.5, 1.0):
            xv = xlo + frac * (xhi - xlo)
            yv = ylo + frac * (yhi - ylo)
            ET.SubElement(g, "text", x=f"{MARGIN + frac * w:.2f}", y=str(MARGIN + h + 16),
                          **{"text-anchor": "middle", "font-size": "10"}).text = \
                f"{10 ** xv if self.logx else xv:.4g}"
            ET.SubElement(g, "text", x=str(MARGIN - 4), y=f"{MARGIN + (1 - frac) * h + 4:.2f}",
                          **{"text-anchor": "end", "font-size": "10"}).text = f"{yv:.4g}"
        for k, (label, x, y, markers) in enumerate(self.lines):
            color = COLORS[k % len(COLORS)]
            ok = np.isfinite(x) & np.isfinite(y) & ((x > 0) if self.logx else True)
            px, py = to_px(x[ok], y[ok])
            pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
            ET.SubElement(g, "polyline", points=pts, fill="none", stroke=color,
                          **{"stroke-width": "1.5"}).set("data-label", label)
            if markers:
                for a, b in zip(px, py):
                    ET.SubElement(g, "circle", cx=f"{a:.2f}", cy=f"{b:.2f}", r="3", fill=color)
            ET.SubElement(g, "text", x=str(MARGIN + w - 4), y=str(MARGIN + 14 + 14 * k),
                          fill=color, **{"text-anchor": "end", "font-size": "11"}).text = label
        return g


def render_svg(panels: list[Panel]) -> str:
    """Stack panels vertically into one SVG document."""
    root = ET.Element("svg", xmlns=SVG_NS, version="1.1", width=str(PANEL_W),
                      height=str(PANEL_H * max(1, len(panels))))
    for i, p in enumerate(panels):
        p.render(root, 0, i * PANEL_H)
    return ET.tostring(root, encoding="unicode")


def dissipation_figure(histories: dict, sweep: dict | None = None, fit=None) -> str:
    """Figure with ``eps(t)`` per run and, optionally, ``<eps>`` against ``Re``.

    Parameters
    ----------
    histories : dict
        Label to ``(t, eps)`` pairs.
    sweep : dict, optional
        Label to ``(Re, eps_avg)`` pairs.
    fit : FitResult, optional
        Adds the fitted ``a + b / Re`` curve over the sweep range.
    """
    panels = []
    if histories:
        p = Panel("energy dissipation rate", "t", "eps")
        for label, (t, eps) in histories.items():
            p.add(label, t, eps)
        panels.append(p)
    if sweep:
        p = Panel("time-averaged dissipation", "Re", "<eps>", logx=True)
        all_re = []
        for label, (re, eps) in sweep.items():
            order = np.argsort(re)
            p.add(label, np.asarray(re)[order], np.asarray(eps)[order], markers=True)
            all_re.extend(re)
        if fit is not None and all_re:
            grid = np.geomspace(min(all_re), max(all_re), 50)
            p.add(f"{fit.a:.4g} + {fit.b:.4g}/Re", grid, fit.a + fit.b / grid)
        panels.append(p)
    if not panels:
        raise ValueError("nothing to plot")
    return render_svg(panels)


def count_points(svg_text: str) -> list[int]:
    """Number of vertices in each polyline of an SVG document."""
    root = ET.fromstring(svg_text)
    out = []
    for el in root.iter(f"{{{SVG_NS}}}polyline"):
        pts = el.get("points", "").split()
        out.append(len(pts))
    return out


__all__ = ["Panel", "render_svg", "dissipation_figure", "count_points"]
