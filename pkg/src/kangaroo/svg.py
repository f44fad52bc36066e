"""Minimal SVG line plots, so the CLI needs no plotting library.

Output is plain text with fixed number formatting, which keeps the files
byte-identical between runs.
"""
from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


@dataclass(frozen=True)
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray


def nice_ticks(lo: float, hi: float, count: int = 5) -> np.ndarray:
    """Round tick positions covering [lo, hi]."""
    if not np.isfinite(lo) or not np.isfinite(hi):
        return np.array([0.0])
    if hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / max(count, 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = np.ceil(lo / step - 1e-9) * step
    ticks = np.arange(start, hi + step * 1e-9, step)
    return np.round(ticks, 12)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    s = f"{v:.6g}"
    return "0" if s in ("-0", "0") else s


def line_plot(series, title: str = "", xlabel: str = "", ylabel: str = "", width: int = 640,
              height: int = 360, markers=()) -> str:
    """Render ``series`` (iterable of :class:`Series`) as one SVG document.

    ``markers`` are x positions drawn as dashed vertical lines.
    """
    series = [s for s in series if len(s.x)]
    left, right, top, bottom = 64, 16 + (120 if len(series) > 1 else 0), 32, 48
    pw, ph = width - left - right, height - top - bottom
    if series:
        xs = np.concatenate([np.asarray(s.x, float) for s in series])
        ys = np.concatenate([np.asarray(s.y, float) for s in series])
        ys = ys[np.isfinite(ys)]
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        pad = max(abs(y0) * 0.1, 1e-3)
        y0, y1 = y0 - pad, y1 + pad
    else:
        pad = 0.05 * (y1 - y0)
        y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return left + (np.asarray(x, float) - x0) / (x1 - x0) * pw

    def py(y):
        return top + (y1 - np.asarray(y, float)) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    for t in nice_ticks(x0, x1):
        X = _fmt(px(t))
        out.append(f'<line x1="{X}" y1="{top}" x2="{X}" y2="{top + ph}" stroke="#eee"/>')
        out.append(f'<text x="{X}" y="{top + ph + 14}" text-anchor="middle">{_label(t)}</text>')
    for t in nice_ticks(y0, y1):
        Y = _fmt(py(t))
        out.append(f'<line x1="{left}" y1="{Y}" x2="{left + pw}" y2="{Y}" stroke="#eee"/>')
        out.append(f'<text x="{left - 4}" y="{Y}" text-anchor="end" dominant-baseline="middle">{_label(t)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    for m in markers:
        if x0 <= m <= x1:
            X = _fmt(px(m))
            out.append(f'<line x1="{X}" y1="{top}" x2="{X}" y2="{top + ph}" stroke="#999" stroke-dasharray="4 3"/>')
    for i, s in enumerate(series):
        colour = PALETTE[i % len(PALETTE)]
        y = np.asarray(s.y, float)
        ok = np.isfinite(y)
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px(np.asarray(s.x)[ok]), py(y[ok])))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        if len(series) > 1:
            ly = top + 8 + 16 * i
            out.append(f'<line x1="{left + pw + 8}" y1="{ly}" x2="{left + pw + 28}" y2="{ly}" '
                       f'stroke="{colour}" stroke-width="2"/>')
            out.append(f'<text x="{left + pw + 32}" y="{ly}" dominant-baseline="middle">{escape(s.label)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def columns_plot(t, table, labels, **kw) -> str:
    """One series per column of ``table`` against ``t``."""
    table = np.atleast_2d(np.asarray(table, float))
    if table.shape[0] != len(t):
        table = table.T
    return line_plot([Series(l, np.asarray(t), table[:, i]) for i, l in enumerate(labels)], **kw)
