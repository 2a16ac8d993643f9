"""Minimal hand-written SVG figures: domain and ray overlays, line plots."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]


def _polyline(pts, color, width=1.0, opacity=1.0, dash=None):
    d = " ".join(f"{x:.3f},{y:.3f}" for x, y in pts)
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="{width}" '
            f'stroke-opacity="{opacity}"{extra}/>')


def _doc(w, h, body):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">\n'
            f'<rect width="{w}" height="{h}" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n")


def domain_figure(domain, paths=(), regions=(), size: int = 480, title: str = "") -> str:
    """Boundary curves, highlighted regions and ray polylines in data coordinates."""
    x0, x1, y0, y1 = domain.bbox
    pad = 0.05 * max(x1 - x0, y1 - y0)
    x0, x1, y0, y1 = x0 - pad, x1 + pad, y0 - pad, y1 + pad
    scale = size / max(x1 - x0, y1 - y0)
    w, h = int((x1 - x0) * scale), int((y1 - y0) * scale) + 24

    def tr(p):
        p = np.atleast_2d(p)
        return np.stack([(p[:, 0] - x0) * scale, 24 + (y1 - p[:, 1]) * scale], axis=1)

    body = []
    if title:
        body.append(f'<text x="6" y="16" font-family="sans-serif" font-size="13">{escape(title)}</text>')
    for c in domain.curves:
        body.append(_polyline(tr(c.polyline(400)), "black", 1.5))
    for k, reg in enumerate(regions):
        c = domain.curve(reg.curve)
        s = np.linspace(0, c.length, 800)
        inside = reg.contains(s, c.length)
        pts = c.point(s)
        color = COLORS[(k + 1) % len(COLORS)]
        start = None
        for i, flag in enumerate(np.append(inside, False)):
            if flag and start is None:
                start = i
            elif not flag and start is not None:
                if i - start > 1:
                    body.append(_polyline(tr(pts[start:i]), color, 4.0, 0.6))
                start = None
    for k, p in enumerate(paths):
        pts = np.asarray(p)
        if len(pts) > 1:
            body.append(_polyline(tr(pts), COLORS[k % len(COLORS)], 0.8, 0.7))
    return _doc(w, h, body)


def line_plot(series: dict, xlabel: str = "", ylabel: str = "", logy: bool = False, title: str = "",
              width: int = 520, height: int = 320, markers: bool = False) -> str:
    """``series`` maps a label to ``(x, y)`` arrays."""
    left, right, top, bottom = 64, 16, 28, 44
    xs, ys = [], []
    clean = {}
    for name, (x, y) in series.items():
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if logy:
            keep &= y > 0
        x, y = x[keep], y[keep]
        if logy:
            y = np.log10(y)
        clean[name] = (x, y)
        xs.append(x)
        ys.append(y)
    body = []
    if title:
        body.append(f'<text x="{left}" y="18" font-family="sans-serif" font-size="13">{escape(title)}</text>')
    if not xs or not sum(len(x) for x in xs):
        return _doc(width, height, body + ['<text x="80" y="160" font-family="sans-serif">no data</text>'])
    X = np.concatenate(xs)
    Y = np.concatenate(ys)
    xa, xb = float(X.min()), float(X.max())
    ya, yb = float(Y.min()), float(Y.max())
    if xb == xa:
        xa, xb = xa - 1, xb + 1
    if yb == ya:
        ya, yb = ya - 1, yb + 1
    pw, ph = width - left - right, height - top - bottom

    def tr(x, y):
        return np.stack([left + (x - xa) / (xb - xa) * pw, top + (yb - y) / (yb - ya) * ph], axis=1)

    body.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    for frac in (0.0, 0.5, 1.0):
        xv = xa + frac * (xb - xa)
        yv = ya + frac * (yb - ya)
        ylab = f"1e{yv:.1f}" if logy else f"{yv:.3g}"
        body.append(f'<text x="{left + frac * pw - 10:.1f}" y="{height - bottom + 16}" font-size="10" '
                    f'font-family="sans-serif">{xv:.3g}</text>')
        body.append(f'<text x="4" y="{top + (1 - frac) * ph + 4:.1f}" font-size="10" '
                    f'font-family="sans-serif">{ylab}</text>')
    body.append(f'<text x="{left + pw / 2 - 20}" y="{height - 8}" font-size="11" font-family="sans-serif">'
                f'{escape(xlabel)}</text>')
    body.append(f'<text x="4" y="{top - 8}" font-size="11" font-family="sans-serif">{escape(ylabel)}</text>')
    for k, (name, (x, y)) in enumerate(clean.items()):
        color = COLORS[k % len(COLORS)]
        pts = tr(x, y)
        if len(pts) > 1:
            body.append(_polyline(pts, color, 1.4))
        if markers:
            body += [f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{color}"/>' for px, py in pts]
        body.append(f'<text x="{left + pw - 140}" y="{top + 14 + 14 * k}" font-size="11" fill="{color}" '
                    f'font-family="sans-serif">{escape(str(name))}</text>')
    return _doc(width, height, body)


def decay_figure(sweeps: dict) -> str:
    series = {}
    for name, sw in sweeps.items():
        rows = [r for r in sw.get("rows", []) if r.get("trace") is not None]
        if rows:
            series[name] = ([math.log2(r["k"]) for r in rows], [r["trace"] for r in rows])
    return line_plot(series, "log2 k", "trace norm", logy=True, title="invisible packets", markers=True)
