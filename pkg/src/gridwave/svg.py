"""Minimal SVG scatter of an eigenvalue spectrum in the complex plane."""
import math

import numpy as np

_W, _H, _PAD = 640, 480, 56


def _nice_range(lo, hi):
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    span = hi - lo
    return lo - 0.05 * span, hi + 0.05 * span


def _ticks(lo, hi, n=5):
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (m * step) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step) + 1)]


def spectrum_svg(series, title="Eigenvalue spectrum"):
    """``series`` maps a label to a sequence of complex eigenvalues."""
    colors = ("#1f4e9c", "#c8501e", "#2b8a3e", "#7a3fa0")
    pts = np.concatenate([np.asarray(v, dtype=complex) for v in series.values()] or [[0j]])
    x0, x1 = _nice_range(float(pts.real.min()), float(max(pts.real.max(), 0.0)))
    y0, y1 = _nice_range(float(pts.imag.min()), float(pts.imag.max()))

    def sx(v):
        return _PAD + (v - x0) / (x1 - x0) * (_W - 2 * _PAD)

    def sy(v):
        return _H - _PAD - (v - y0) / (y1 - y0) * (_H - 2 * _PAD)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{sx(t):.2f}" y1="{_PAD}" x2="{sx(t):.2f}" y2="{_H - _PAD}" '
                   'stroke="#e4e4e4"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{_H - _PAD + 16}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{_PAD}" y1="{sy(t):.2f}" x2="{_W - _PAD}" y2="{sy(t):.2f}" '
                   'stroke="#e4e4e4"/>')
        out.append(f'<text x="{_PAD - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:g}</text>')
    if x0 <= 0 <= x1:
        out.append(f'<line x1="{sx(0):.2f}" y1="{_PAD}" x2="{sx(0):.2f}" y2="{_H - _PAD}" '
                   'stroke="#888" stroke-dasharray="4 3"/>')
    out.append(f'<text x="{_W / 2:.1f}" y="{_H - 14}" text-anchor="middle">Re (1/s)</text>')
    out.append(f'<text x="16" y="{_H / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_H / 2:.1f})">Im (rad/s)</text>')
    for k, (label, vals) in enumerate(series.items()):
        c = colors[k % len(colors)]
        for lam in np.asarray(vals, dtype=complex):
            out.append(f'<circle cx="{sx(lam.real):.2f}" cy="{sy(lam.imag):.2f}" r="3.5" '
                       f'fill="none" stroke="{c}"/>')
        out.append(f'<text x="{_W - _PAD - 4}" y="{_PAD + 14 + 14 * k}" text-anchor="end" '
                   f'fill="{c}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
