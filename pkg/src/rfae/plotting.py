"""Static SVG scatter plots of 2-D embeddings, written by hand so the bytes
depend only on the input."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")

WIDTH, HEIGHT = 640, 480
MARGIN = 50
LEGEND_W = 120


def class_color(c: int) -> str:
    if c < len(PALETTE):
        return PALETTE[c]
    # golden-angle hues beyond the base palette
    hue = (c * 137.508) % 360
    return f"hsl({hue:.1f},60%,45%)"


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def scatter_svg(Z, labels=None, class_names=None, title: str = "", radius: float = 2.5) -> str:
    """Return an SVG document with one ``<circle>`` per row of ``Z``.

    Parameters
    ----------
    Z : (n, 2) array
    labels : (n,) int array, optional
        Class index per point; one color per class and one legend entry.
    class_names : sequence of str, optional
        Legend text; defaults to the class indices.
    """
    Z = np.asarray(Z, dtype=np.float64).reshape(-1, 2) if np.size(Z) else np.zeros((0, 2))
    n = Z.shape[0]
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError(f"row mismatch: {n} points but {labels.size} labels")
    if not np.all(np.isfinite(Z)):
        raise ValueError("non-finite coordinates")

    x0, y0 = MARGIN, MARGIN
    x1, y1 = WIDTH - MARGIN - LEGEND_W, HEIGHT - MARGIN
    if n:
        lo, hi = Z.min(axis=0), Z.max(axis=0)
    else:
        lo, hi = np.zeros(2), np.ones(2)
    span = np.where(hi > lo, hi - lo, 1.0)
    lo = lo - 0.05 * span
    span = span * 1.1

    def sx(v):
        return x0 + (v - lo[0]) / span[0] * (x1 - x0)

    def sy(v):
        return y1 - (v - lo[1]) / span[1] * (y1 - y0)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH // 2}" y="{MARGIN // 2}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="14">{escape(title)}</text>')
    # axes with min/max tick labels
    out.append(f'<g class="axes" stroke="black" stroke-width="1">'
               f'<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}"/>'
               f'<line x1="{x0}" y1="{y1}" x2="{x0}" y2="{y0}"/></g>')
    out.append('<g class="ticks" font-family="sans-serif" font-size="10">')
    out.append(f'<text x="{x0}" y="{y1 + 15}">{_fmt(lo[0])}</text>')
    out.append(f'<text x="{x1}" y="{y1 + 15}" text-anchor="end">{_fmt(lo[0] + span[0])}</text>')
    out.append(f'<text x="{x0 - 5}" y="{y1}" text-anchor="end">{_fmt(lo[1])}</text>')
    out.append(f'<text x="{x0 - 5}" y="{y0 + 10}" text-anchor="end">{_fmt(lo[1] + span[1])}</text>')
    out.append(f'<text x="{(x0 + x1) // 2}" y="{HEIGHT - 10}" text-anchor="middle">z1</text>')
    out.append(f'<text x="12" y="{(y0 + y1) // 2}" text-anchor="middle">z2</text>')
    out.append("</g>")

    out.append('<g class="points">')
    for (a, b), c in zip(Z, labels):
        out.append(f'<circle cx="{_fmt(sx(a))}" cy="{_fmt(sy(b))}" r="{radius}" '
                   f'fill="{class_color(int(c))}"/>')
    out.append("</g>")

    classes = np.unique(labels) if n else np.zeros(0, dtype=np.int64)
    out.append('<g class="legend" font-family="sans-serif" font-size="11">')
    for k, c in enumerate(classes):
        name = class_names[c] if class_names is not None and c < len(class_names) else str(c)
        ly = y0 + 16 * k
        out.append(f'<rect x="{x1 + 15}" y="{ly}" width="10" height="10" '
                   f'fill="{class_color(int(c))}"/>')
        out.append(f'<text x="{x1 + 30}" y="{ly + 9}">{escape(str(name))}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_scatter(path, Z, labels=None, class_names=None, title: str = ""):
    Path(path).write_text(scatter_svg(Z, labels, class_names, title))
