"""Minimal SVG emitter: line traces and bar histograms, nothing more."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_WIDTH, _HEIGHT, _MARGIN = 900, 420, 50

_COLORS = ("#888888", "#d62728", "#1f77b4", "#2ca02c")


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return out_lo + (np.asarray(values, float) - lo) * (out_hi - out_lo) / span


def _axes(x_lo, x_hi, y_lo, y_hi, title):
    w, h, m = _WIDTH, _HEIGHT, _MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<line x1="{m}" y1="{h - m}" x2="{w - m}" y2="{h - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{h - m}" stroke="black"/>',
        f'<text x="{w / 2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{m}" y="{h - m + 20}" font-size="11">{x_lo:.6g}</text>',
        f'<text x="{w - m}" y="{h - m + 20}" text-anchor="end" font-size="11">{x_hi:.6g}</text>',
        f'<text x="{m - 5}" y="{h - m}" text-anchor="end" font-size="11">{y_lo:.6g}</text>',
        f'<text x="{m - 5}" y="{m + 4}" text-anchor="end" font-size="11">{y_hi:.6g}</text>',
    ]
    return parts


def svg_lines(path, x, series, title="") -> None:
    """Overlaid line plots; series is a list of y arrays sharing x."""
    x = np.asarray(x, float)
    ys = [np.asarray(y, float) for y in series]
    y_all = np.concatenate(ys)
    finite = y_all[np.isfinite(y_all)]
    y_lo, y_hi = (float(finite.min()), float(finite.max())) if len(finite) else (0.0, 1.0)
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 1, y_hi + 1
    parts = _axes(float(x[0]), float(x[-1]), y_lo, y_hi, title)
    px = _scale(x, x[0], x[-1], _MARGIN, _WIDTH - _MARGIN)
    for k, y in enumerate(ys):
        py = _scale(y, y_lo, y_hi, _HEIGHT - _MARGIN, _MARGIN)
        step = max(1, len(x) // 4000)  # cap the polyline size
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px[::step], py[::step]))
        parts.append(
            f'<polyline points="{pts}" fill="none" '
            f'stroke="{_COLORS[k % len(_COLORS)]}" stroke-width="1"/>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def svg_hist(path, edges, counts, title="", overlay=None) -> None:
    """Bar histogram from bin edges and counts, with an optional overlay
    curve given as (x, y)."""
    edges = np.asarray(edges, float)
    counts = np.asarray(counts, float)
    y_hi = float(counts.max()) if counts.size and counts.max() > 0 else 1.0
    x_lo, x_hi = float(edges[0]), float(edges[-1])
    parts = _axes(x_lo, x_hi, 0.0, y_hi, title)
    px = _scale(edges, x_lo, x_hi, _MARGIN, _WIDTH - _MARGIN)
    for j, c in enumerate(counts):
        top = _scale([c], 0, y_hi, _HEIGHT - _MARGIN, _MARGIN)[0]
        parts.append(
            f'<rect x="{px[j]:.2f}" y="{top:.2f}" '
            f'width="{max(px[j + 1] - px[j] - 1, 1):.2f}" '
            f'height="{_HEIGHT - _MARGIN - top:.2f}" fill="#1f77b4"/>'
        )
    if overlay is not None:
        ox, oy = overlay
        pox = _scale(np.asarray(ox, float), x_lo, x_hi, _MARGIN, _WIDTH - _MARGIN)
        poy = _scale(np.asarray(oy, float), 0, y_hi, _HEIGHT - _MARGIN, _MARGIN)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(pox, poy))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#d62728" stroke-width="1.5"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
