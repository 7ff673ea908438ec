"""Plain-SVG shape plots and ranking tables for circularity reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .data import Dataset
from .gam import FeatureShape, FittedGam, feature_shape

PANEL_W = 320
PANEL_H = 240
MARGIN = (64, 16, 36, 40)  # left, right, top, bottom
MAX_RUG = 200
RANKING_HEADER = ("Rank", "Included Features", "D²", "Complexity(EDF)")
FEATURE_SEP = " + "


def _f(x: float) -> str:
    """Fixed-precision coordinate formatting; ``-0.00`` is normalized."""
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _label(x: float) -> str:
    return f"{x:.4g}"


@dataclass
class ShapePanel:
    """One subplot: a feature shape, optional rule overlay, rug and labels.

    ``offset`` is added to the shape before drawing; set it to the model
    intercept to compare a shape with an uncentred rule overlay.
    """

    shape: FeatureShape
    overlay: np.ndarray | None = None
    title: str = ""
    xlabel: str = ""
    ylabel: str = "f(x)"
    d_squared: float | None = None
    offset: float = 0.0

    def __post_init__(self):
        grid = np.asarray(self.shape.grid)
        values = np.asarray(self.shape.values)
        if grid.shape != values.shape or grid.ndim != 1 or grid.size < 2:
            raise ValueError(
                f"panel {self.shape.feature_name!r}: grid and values must be equal-length 1-D arrays (>= 2 points)"
            )
        if self.overlay is not None:
            self.overlay = np.asarray(self.overlay, dtype=float)
            if self.overlay.shape != grid.shape:
                raise ValueError(f"panel {self.shape.feature_name!r}: overlay length does not match the grid")
        self.title = self.title or self.shape.feature_name
        self.xlabel = self.xlabel or self.shape.feature_name


def panel_from_fit(fitted: FittedGam, feature: str, rule=None, grid_size: int = 512, title: str = "") -> ShapePanel:
    """Panel for one term of a fitted model.

    With a label ``rule`` whose marginal covers ``feature``, the rule's step
    function is overlaid and the shape is shifted by the intercept.
    """
    shape = feature_shape(fitted, feature, grid_size)
    overlay, offset = None, 0.0
    if rule is not None and feature in rule.marginals:
        overlay = rule.marginal(feature, shape.grid)
        offset = fitted.intercept
    return ShapePanel(shape, overlay, title or feature, d_squared=fitted.d_squared, offset=offset)


def _rug_points(rug) -> np.ndarray:
    u = np.unique(np.asarray(rug, dtype=float))
    if u.size > MAX_RUG:
        u = u[np.round(np.linspace(0, u.size - 1, MAX_RUG)).astype(int)]
    return u


def _y_range(panels) -> tuple[float, float]:
    ys = []
    for p in panels:
        ys.append(np.asarray(p.shape.values, dtype=float) + p.offset)
        if p.overlay is not None:
            ys.append(p.overlay)
    ylo = min(0.0, min(float(np.min(v)) for v in ys))
    yhi = max(0.0, max(float(np.max(v)) for v in ys))
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 1.0, yhi + 1.0
    pad = 0.05 * (yhi - ylo)
    return ylo - pad, yhi + pad


def _panel_svg(p: ShapePanel, x0: float, y0: float, yrange=None) -> list[str]:
    left, right, top, bottom = MARGIN
    w = PANEL_W - left - right
    h = PANEL_H - top - bottom
    grid = np.asarray(p.shape.grid, dtype=float)
    vals = np.asarray(p.shape.values, dtype=float) + p.offset
    ylo, yhi = yrange or _y_range([p])
    xlo, xhi = float(grid[0]), float(grid[-1])
    if xhi - xlo < 1e-12:
        xlo, xhi = xlo - 0.5, xhi + 0.5

    def sx(x):
        return x0 + left + (np.asarray(x) - xlo) / (xhi - xlo) * w

    def sy(y):
        return y0 + top + (yhi - np.asarray(y)) / (yhi - ylo) * h

    def poly(yv, style):
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(sx(grid), sy(yv)))
        return f'<polyline points="{pts}" {style}/>'

    out = [f'<g class="panel" id="panel-{escape(p.shape.feature_name)}">']
    out.append(
        f'<rect x="{_f(x0 + left)}" y="{_f(y0 + top)}" width="{_f(w)}" height="{_f(h)}" '
        'fill="none" stroke="#444" stroke-width="0.8"/>'
    )
    zy = float(sy(0.0))
    out.append(
        f'<line x1="{_f(x0 + left)}" y1="{_f(zy)}" x2="{_f(x0 + left + w)}" y2="{_f(zy)}" '
        'stroke="#bbb" stroke-dasharray="2,2" stroke-width="0.6"/>'
    )
    base = y0 + top + h
    ticks = "".join(f"M{_f(x)},{_f(base)}v-5" for x in sx(_rug_points(p.shape.rug)))
    if ticks:
        out.append(f'<path class="rug" d="{ticks}" stroke="#888" stroke-width="0.5"/>')
    if p.overlay is not None:
        out.append(poly(p.overlay, 'class="overlay" fill="none" stroke="#d62728" stroke-width="1.2" stroke-dasharray="4,3"'))
    out.append(poly(vals, 'class="shape" fill="none" stroke="#1f77b4" stroke-width="1.5"'))
    tx = x0 + left
    out.append(f'<text x="{_f(tx)}" y="{_f(y0 + top - 8)}" font-size="12">{escape(p.title)}</text>')
    if p.d_squared is not None:
        out.append(
            f'<text x="{_f(tx + w)}" y="{_f(y0 + top - 8)}" font-size="10" text-anchor="end">'
            f"D² = {100 * p.d_squared:.1f}%</text>"
        )
    out.append(f'<text x="{_f(tx)}" y="{_f(base + 14)}" font-size="9">{escape(_label(xlo))}</text>')
    out.append(
        f'<text x="{_f(tx + w)}" y="{_f(base + 14)}" font-size="9" text-anchor="end">{escape(_label(xhi))}</text>'
    )
    out.append(
        f'<text x="{_f(tx + w / 2)}" y="{_f(base + 28)}" font-size="10" text-anchor="middle">{escape(p.xlabel)}</text>'
    )
    out.append(
        f'<text x="{_f(tx - 4)}" y="{_f(y0 + top + 8)}" font-size="9" text-anchor="end">{escape(_label(yhi))}</text>'
    )
    out.append(f'<text x="{_f(tx - 4)}" y="{_f(base)}" font-size="9" text-anchor="end">{escape(_label(ylo))}</text>')
    out.append(
        f'<text x="{_f(x0 + 12)}" y="{_f(y0 + top + h / 2)}" font-size="10" text-anchor="middle" '
        f'transform="rotate(-90 {_f(x0 + 12)} {_f(y0 + top + h / 2)})">{escape(p.ylabel)}</text>'
    )
    out.append("</g>")
    return out


def render_svg(panels, columns: int = 2, title: str = "", share_y: bool = False) -> str:
    """Standalone SVG 1.1 document with one subplot per panel.

    With ``share_y`` every panel uses the same vertical range, so a
    nullified shape is drawn as a flat line next to the active ones.
    """
    panels = list(panels)
    if not panels:
        raise ValueError("need at least one panel")
    if columns < 1:
        raise ValueError(f"columns must be >= 1, got {columns}")
    cols = min(columns, len(panels))
    rows = -(-len(panels) // cols)
    head = 24 if title else 0
    W, H = cols * PANEL_W, rows * PANEL_H + head
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{W / 2:.1f}" y="16" font-size="13" text-anchor="middle">{escape(title)}</text>')
    yrange = _y_range(panels) if share_y else None
    for i, p in enumerate(panels):
        out.extend(_panel_svg(p, (i % cols) * PANEL_W, head + (i // cols) * PANEL_H, yrange))
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- tables


def ranking_rows(report) -> list[tuple[int, tuple[str, ...], float, float]]:
    return [(i + 1, tuple(c.features), c.d_squared, c.edf) for i, c in enumerate(report.candidates)]


def ranking_csv(report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RANKING_HEADER)
    for rank, feats, d2, edf in ranking_rows(report):
        w.writerow([rank, FEATURE_SEP.join(feats), f"{d2:.8f}", f"{edf:.6f}"])
    return buf.getvalue()


def render_ranking_table(report, limit: int | None = None) -> tuple[str, str]:
    """Fixed-width text table and the matching CSV."""
    rows = ranking_rows(report)
    shown = rows if limit is None else rows[:limit]
    cells = [(str(r), FEATURE_SEP.join(f), f"{100 * d:.2f}%", f"{e:.2f}") for r, f, d, e in shown]
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(RANKING_HEADER)]

    def line(vals):
        return " | ".join(v.ljust(wd) if i == 1 else v.rjust(wd) for i, (v, wd) in enumerate(zip(vals, widths)))

    text = [line(RANKING_HEADER), "-+-".join("-" * wd for wd in widths)] + [line(c) for c in cells]
    return "\n".join(text) + "\n", ranking_csv(report)


def parse_ranking_csv(text: str) -> list[tuple[int, tuple[str, ...], float, float]]:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != RANKING_HEADER:
        raise ValueError(f"unexpected ranking header {header}")
    return [(int(r), tuple(f.split(FEATURE_SEP)), float(d), float(e)) for r, f, d, e in reader]


def correlation_csv(data: Dataset, names=None) -> str:
    """Pearson correlation matrix of the given columns (zero-variance -> 0)."""
    names = list(data.names if names is None else names)
    X = data.matrix(names)
    Xc = X - X.mean(axis=0)
    norms = np.sqrt((Xc * Xc).sum(axis=0))
    safe = np.where(norms > 0, norms, 1.0)
    C = (Xc.T @ Xc) / np.outer(safe, safe)
    C[norms == 0, :] = 0.0
    C[:, norms == 0] = 0.0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + names)
    for n, row in zip(names, C):
        w.writerow([n] + [f"{v:.6f}" for v in row])
    return buf.getvalue()
