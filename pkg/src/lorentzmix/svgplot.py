"""Minimal SVG line plots: polylines, axes, ticks.  No plotting dependency."""

from __future__ import annotations

import math

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 16, 32, 48

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / max(n, 1)))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= n:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-12 * span:
        out.append(round(t, 12))
        t += step
    return out


def line_plot(
    series: dict[str, tuple],
    title: str,
    xlabel: str,
    ylabel: str,
    log_x: bool = False,
) -> str:
    """Render named (x, y) series to an SVG document string."""

    def txf(x):
        return math.log10(x) if log_x else x

    xs = [txf(x) for _, (xv, _) in series.items() for x in xv]
    ys = [y for _, (_, yv) in series.items() for y in yv]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    xlo, xhi = min(xs), max(xs)
    ylo, yhi = min(ys), max(ys)
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad

    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + pw * (txf(x) - xlo) / (xhi - xlo)

    def py(y):
        return MARGIN_T + ph * (1.0 - (y - ylo) / (yhi - ylo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" '
        'fill="none" stroke="black"/>',
    ]
    for t in _ticks(ylo, yhi):
        y = py(t)
        parts.append(
            f'<line x1="{MARGIN_L - 4}" y1="{y:.1f}" x2="{MARGIN_L}" y2="{y:.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{MARGIN_L - 8}" y="{y + 4:.1f}" text-anchor="end">{t:g}</text>'
        )
    xt = _ticks(xlo, xhi)
    for t in xt:
        xx = MARGIN_L + pw * (t - xlo) / (xhi - xlo)
        label = f"{10 ** t:g}" if log_x else f"{t:g}"
        parts.append(
            f'<line x1="{xx:.1f}" y1="{MARGIN_T + ph}" x2="{xx:.1f}" '
            f'y2="{MARGIN_T + ph + 4}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{xx:.1f}" y="{MARGIN_T + ph + 18}" text-anchor="middle">{label}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_L + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle">{xlabel}</text>'
    )
    parts.append(
        f'<text x="16" y="{MARGIN_T + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN_T + ph / 2})">{ylabel}</text>'
    )
    for i, (name, (xv, yv)) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xv, yv))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{MARGIN_L + pw - 6}" y="{MARGIN_T + 16 + 14 * i}" '
            f'text-anchor="end" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
