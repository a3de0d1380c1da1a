"""Minimal native SVG line plots: axes, ticks, legend, markers.

No plotting dependency; output is deterministic for fixed inputs, which the
byte-identity contract on CLI artifacts relies on.
"""

from __future__ import annotations

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f"]

W, H = 640, 440
MARGIN = {"left": 70, "right": 20, "top": 30, "bottom": 55}


def _ticks(lo: float, hi: float, n: int = 6) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min(s for s in (1, 2, 2.5, 5, 10) if s * mag >= raw) * mag
    first = np.ceil(lo / step) * step
    return np.arange(first, hi + 0.5 * step, step)


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def line_plot(series: list[dict], xlabel: str, ylabel: str, title: str,
              logx: bool = False, vlines: list[tuple[float, str]] = ()) -> str:
    """Render series [{x, y, label, dashed?}] to an SVG string."""
    xs = np.concatenate([np.asarray(s["x"], dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s["y"], dtype=float) for s in series])
    if logx:
        xs = np.log10(xs)
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    pad = 0.05 * (y_hi - y_lo + 1e-12)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    px = lambda x: MARGIN["left"] + (x - x_lo) / (x_hi - x_lo) \
        * (W - MARGIN["left"] - MARGIN["right"])
    py = lambda y: H - MARGIN["bottom"] - (y - y_lo) / (y_hi - y_lo) \
        * (H - MARGIN["top"] - MARGIN["bottom"])

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="Helvetica,sans-serif">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W/2:.1f}" y="18" text-anchor="middle" '
           f'font-size="14">{title}</text>']

    # axes box
    out.append(f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" '
               f'width="{W - MARGIN["left"] - MARGIN["right"]}" '
               f'height="{H - MARGIN["top"] - MARGIN["bottom"]}" '
               f'fill="none" stroke="#333" stroke-width="1"/>')

    for tx in _ticks(x_lo, x_hi):
        X = px(tx)
        out.append(f'<line x1="{X:.1f}" y1="{py(y_lo):.1f}" x2="{X:.1f}" '
                   f'y2="{py(y_lo) + 5:.1f}" stroke="#333"/>')
        label = _fmt(10 ** tx) if logx else _fmt(tx)
        out.append(f'<text x="{X:.1f}" y="{py(y_lo) + 20:.1f}" '
                   f'text-anchor="middle" font-size="11">{label}</text>')
    for ty in _ticks(y_lo, y_hi):
        Y = py(ty)
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{Y:.1f}" '
                   f'x2="{MARGIN["left"]}" y2="{Y:.1f}" stroke="#333"/>')
        out.append(f'<text x="{MARGIN["left"] - 9}" y="{Y + 4:.1f}" '
                   f'text-anchor="end" font-size="11">{_fmt(ty)}</text>')
        out.append(f'<line x1="{MARGIN["left"]}" y1="{Y:.1f}" '
                   f'x2="{W - MARGIN["right"]}" y2="{Y:.1f}" '
                   f'stroke="#ddd" stroke-width="0.5"/>')

    out.append(f'<text x="{W/2:.1f}" y="{H - 12}" text-anchor="middle" '
               f'font-size="13">{xlabel}</text>')
    out.append(f'<text x="18" y="{H/2:.1f}" text-anchor="middle" '
               f'font-size="13" transform="rotate(-90 18 {H/2:.1f})">{ylabel}</text>')

    for xv, lab in vlines:
        X = px(np.log10(xv) if logx else xv)
        out.append(f'<line x1="{X:.1f}" y1="{py(y_hi):.1f}" x2="{X:.1f}" '
                   f'y2="{py(y_lo):.1f}" stroke="#555" stroke-width="1" '
                   f'stroke-dasharray="6,3"/>')
        out.append(f'<text x="{X + 4:.1f}" y="{py(y_hi) + 14:.1f}" '
                   f'font-size="11">{lab}</text>')

    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        x = np.asarray(s["x"], dtype=float)
        if logx:
            x = np.log10(x)
        y = np.asarray(s["y"], dtype=float)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        dash = ' stroke-dasharray="6,3"' if s.get("dashed") else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.8"{dash}/>')
        if s.get("markers", True):
            for a, b in zip(x, y):
                out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" '
                           f'r="3" fill="{color}"/>')
        ly = MARGIN["top"] + 16 + 16 * i
        lx = W - MARGIN["right"] - 150
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="1.8"{dash}/>')
        out.append(f'<text x="{lx + 28}" y="{ly}" font-size="11">'
                   f'{s["label"]}</text>')

    out.append("</svg>")
    return "\n".join(out)
