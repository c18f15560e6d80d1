"""Minimal deterministic SVG rendering for training curves and confusion matrices."""

from __future__ import annotations

from html import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_plot(x, series: dict, title: str = "", ylabel: str = "", width: int = 480, height: int = 320) -> str:
    left, right, top, bottom = 60, 20, 30, 40
    pw, ph = width - left - right, height - top - bottom
    x = np.asarray(x, dtype=float)
    ys = np.concatenate([np.asarray(v, dtype=float) for v in series.values()]) if series else np.zeros(1)
    ys = ys[np.isfinite(ys)]
    y_lo, y_hi = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    x_lo, x_hi = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    if x_hi - x_lo < 1e-12:
        x_hi = x_lo + 1.0

    def sx(v):
        return left + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v):
        return top + (1.0 - (v - y_lo) / (y_hi - y_lo)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left + pw / 2}" y="{height - 8}" text-anchor="middle" font-size="12">epoch</text>',
        f'<text x="14" y="{top + ph / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        v = y_lo + frac * (y_hi - y_lo)
        out.append(f'<text x="{left - 4}" y="{_fmt(sy(v) + 4)}" text-anchor="end" font-size="10">{v:.3g}</text>')
    for i, (name, ys_) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(x, ys_) if np.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(
            f'<text x="{left + pw - 4}" y="{top + 14 + 14 * i}" text-anchor="end" font-size="11" '
            f'fill="{color}">{escape(name)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(matrix, labels=None, title: str = "", cell: int = 44) -> str:
    """Row-normalized percentage heatmap of a confusion matrix."""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    labels = [str(i) for i in range(n)] if labels is None else [str(v) for v in labels]
    totals = m.sum(axis=1, keepdims=True)
    pct = np.divide(100.0 * m, totals, out=np.zeros_like(m), where=totals > 0)
    left, top = 90, 40
    width, height = left + n * cell + 20, top + n * cell + 50
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for i in range(n):
        for j in range(n):
            shade = int(round(255 - 2.2 * pct[i, j]))
            fill = f"rgb({shade},{shade},255)"
            x, y = left + j * cell, top + i * cell
            text_color = "white" if pct[i, j] > 60 else "black"
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="#999"/>')
            out.append(
                f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" font-size="10" '
                f'fill="{text_color}">{pct[i, j]:.1f}</text>'
            )
        out.append(
            f'<text x="{left - 6}" y="{top + i * cell + cell / 2 + 4}" text-anchor="end" font-size="11">'
            f"{escape(labels[i])}</text>"
        )
        out.append(
            f'<text x="{left + i * cell + cell / 2}" y="{top + n * cell + 16}" text-anchor="middle" '
            f'font-size="11">{escape(labels[i])}</text>'
        )
    out.append(
        f'<text x="{left + n * cell / 2}" y="{top + n * cell + 38}" text-anchor="middle" font-size="12">predicted</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
