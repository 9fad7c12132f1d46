"""Static SVG figures: evaluation bar chart and mesh heatmap."""

from __future__ import annotations

import math
from html import escape
from typing import Sequence

import numpy as np

from .fea import Mesh

_PALETTE = {"baseline": "#7f7f7f", "ours": "#d62728", "ours_no_arn": "#1f77b4", "torque": "#2ca02c"}


def _doc(width: int, height: int, body: list[str]) -> str:
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">'
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>", ""])


def bar_chart(rows: Sequence[dict], title: str = "Tool RUL at evaluation") -> str:
    """Mean RUL per variant with a one-std whisker and the multiplier over baseline."""
    width, height = 120 + 140 * max(len(rows), 1), 360
    left, top, bottom = 70, 40, 300
    body = [f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15" font-family="sans-serif">{escape(title)}</text>']
    usable = [r for r in rows if r.get("trials", 0) > 0 and math.isfinite(r["mean_rul"])]
    if not usable:
        body.append(f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle" font-family="sans-serif">no trials</text>')
        return _doc(width, height, body)
    peak = max(r["mean_rul"] + r["std_rul"] for r in usable) or 1.0
    scale = (bottom - top) / peak
    body.append(f'<line x1="{left}" y1="{bottom}" x2="{width - 20}" y2="{bottom}" stroke="black"/>')
    body.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>')
    for k in range(5):
        v = peak * k / 4
        y = bottom - v * scale
        body.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end" font-size="10" font-family="sans-serif">{v:.3g}</text>')
    for i, r in enumerate(usable):
        x = left + 30 + 140 * i
        h = r["mean_rul"] * scale
        colour = _PALETTE.get(r["variant"], "#9467bd")
        body.append(f'<rect x="{x}" y="{bottom - h:.2f}" width="80" height="{h:.2f}" fill="{colour}"/>')
        hi = bottom - (r["mean_rul"] + r["std_rul"]) * scale
        lo = bottom - max(r["mean_rul"] - r["std_rul"], 0.0) * scale
        body.append(f'<line x1="{x + 40}" y1="{hi:.2f}" x2="{x + 40}" y2="{lo:.2f}" stroke="black"/>')
        body.append(f'<text x="{x + 40}" y="{bottom + 16}" text-anchor="middle" font-size="12" font-family="sans-serif">{escape(r["variant"])}</text>')
        mult = r.get("improvement", float("nan"))
        if math.isfinite(mult):
            body.append(f'<text x="{x + 40}" y="{hi - 6:.2f}" text-anchor="middle" font-size="12" font-family="sans-serif">{mult:.2f}x</text>')
        body.append(f'<text x="{x + 40}" y="{bottom + 32}" text-anchor="middle" font-size="10" font-family="sans-serif">success {100 * r["success_rate"]:.0f}%</text>')
    return _doc(width, height, body)


def _colour(t: float) -> str:
    # dark red (short life) to pale yellow (long life)
    t = min(max(t, 0.0), 1.0)
    r = int(140 + 115 * t)
    g = int(20 + 220 * t)
    b = int(20 + 150 * t * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def mesh_heatmap(mesh: Mesh, rul: np.ndarray, critical: int | None = None, size: int = 420) -> str:
    """Triangles coloured by log10 RUL; the critical element is outlined."""
    xy = mesh.nodes
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    pad = 30
    s = (size - 2 * pad) / span
    px = lambda p: (pad + (p[0] - lo[0]) * s, size - pad - (p[1] - lo[1]) * s)
    logs = np.log10(np.maximum(np.asarray(rul, dtype=float), 1e-300))
    a, b = float(logs.min()), float(logs.max())
    body = []
    for e, tri in enumerate(mesh.elements):
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (px(xy[n]) for n in tri))
        t = 1.0 if b == a else (logs[e] - a) / (b - a)
        stroke = ' stroke="blue" stroke-width="2"' if e == critical else ' stroke="#444" stroke-width="0.3"'
        body.append(f'<polygon points="{pts}" fill="{_colour(t)}"{stroke}><title>element {e}: log10 RUL {logs[e]:.3f}</title></polygon>')
    body.append(f'<text x="{pad}" y="18" font-size="12" font-family="sans-serif">log10 RUL: {a:.2f} (dark) to {b:.2f} (light)</text>')
    return _doc(size, size, body)
