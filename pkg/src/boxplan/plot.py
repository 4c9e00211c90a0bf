"""SVG figures: boxes, the smooth path and its control polygons.

2-D scenes give one panel; 3-D scenes give three axis projections (xy, xz,
yz) side by side.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .geometry import BoxSet
from .smooth import PiecewiseBezierPath

PANEL = 420
MARGIN = 20
BOX_STYLE = 'fill="#9ecae1" fill-opacity="0.35" stroke="#3182bd" stroke-width="0.8"'
PATH_STYLE = 'fill="none" stroke="#d62728" stroke-width="2"'
POLY_STYLE = 'fill="none" stroke="#555" stroke-width="0.8" stroke-dasharray="3,2"'
CURVE_STYLE = 'fill="none" stroke="#2ca02c" stroke-width="1.2"'


class _Frame:
    # data window -> pixel panel, y up
    def __init__(self, lo, hi, x0):
        span = np.maximum(hi - lo, 1e-9)
        self.s = (PANEL - 2 * MARGIN) / span.max()
        self.lo = lo
        self.x0 = x0
        self.h = PANEL

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        x = self.x0 + MARGIN + (p[..., 0] - self.lo[0]) * self.s
        y = self.h - MARGIN - (p[..., 1] - self.lo[1]) * self.s
        return x, y


def _polyline(frame, pts, style):
    x, y = frame(pts)
    coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))
    return f'<polyline points="{coords}" {style}/>'


def _panel(S: BoxSet, axes, x0, path=None, nodes=None, controls=True, label=""):
    L, U = S.L[:, axes], S.U[:, axes]
    lo, hi = L.min(axis=0), U.max(axis=0)
    if path is not None:
        P = path.points[..., axes]
        lo = np.minimum(lo, P.reshape(-1, 2).min(axis=0))
        hi = np.maximum(hi, P.reshape(-1, 2).max(axis=0))
    f = _Frame(lo, hi, x0)
    out = []
    # larger boxes first so small ones stay visible
    for k in np.argsort(-np.prod(U - L, axis=1), kind="stable"):
        xa, ya = f(L[k])
        xb, yb = f(U[k])
        out.append(f'<rect x="{xa:.2f}" y="{yb:.2f}" width="{xb - xa:.2f}" height="{ya - yb:.2f}" {BOX_STYLE}/>')
    if nodes is not None:
        out.append(_polyline(f, np.asarray(nodes)[:, axes], CURVE_STYLE))
    if path is not None:
        if controls:
            for j in range(path.N):
                out.append(_polyline(f, path.points[j][:, axes], POLY_STYLE))
                x, y = f(path.points[j][:, axes])
                out.extend(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="1.6" fill="#555"/>' for a, b in zip(x, y))
        t = np.linspace(0.0, path.T, 40 * path.N + 1)
        out.append(_polyline(f, path(t)[:, axes], PATH_STYLE))
    if label:
        out.append(f'<text x="{x0 + MARGIN}" y="14" font-size="12" font-family="sans-serif">{escape(label)}</text>')
    return out


def render_svg(S: BoxSet, path: PiecewiseBezierPath | None = None, nodes=None,
               controls: bool = True) -> str:
    """SVG text for the scene, optionally with a smooth path and a polygonal
    curve (nodes)."""
    if S.dim == 2:
        views = [((0, 1), "")]
    elif S.dim == 3:
        views = [((0, 1), "x-y"), ((0, 2), "x-z"), ((1, 2), "y-z")]
    else:
        raise ValueError(f"can only plot 2-D or 3-D scenes, got {S.dim}-D")
    parts = []
    for i, (axes, label) in enumerate(views):
        parts += _panel(S, list(axes), i * PANEL, path, nodes, controls, label)
    width = PANEL * len(views)
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL}" '
            f'viewBox="0 0 {width} {PANEL}">')
    return "\n".join([head, f'<rect width="{width}" height="{PANEL}" fill="white"/>', *parts, "</svg>"]) + "\n"


def save_svg(filename, S: BoxSet, path=None, nodes=None, controls: bool = True):
    with open(filename, "w", encoding="utf-8") as fh:
        fh.write(render_svg(S, path, nodes, controls))
