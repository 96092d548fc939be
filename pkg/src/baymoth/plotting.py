"""Dependency-free SVG plots of regret curves and source usage."""
from __future__ import annotations

from typing import Dict, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .benchmark import AggregateCurve

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")
W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 60, 170, 30, 50


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def regret_svg(curves: Sequence[AggregateCurve], title: str) -> str:
    """Mean regret lines with shaded +-1 std bands, one colour per curve."""
    curves = [c for c in curves if c.n_runs > 0]
    T = max((len(c.mean) for c in curves), default=1)
    ymax = max((float(np.max(c.mean + c.std)) for c in curves), default=1.0)
    ymax = max(ymax, 1e-9)
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(t):
        return LEFT + (t - 1) / max(T - 1, 1) * pw

    def py(v):
        return TOP + ph - min(max(v, 0.0), ymax) / ymax * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2:.0f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
           f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>']
    for t in range(1, T + 1):
        out.append(f'<text x="{_fmt(px(t))}" y="{TOP + ph + 15}" text-anchor="middle">{t}</text>')
    for k in range(5):
        v = ymax * k / 4
        out.append(f'<text x="{LEFT - 6}" y="{_fmt(py(v) + 4)}" text-anchor="end">{v:.2f}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.0f}" y="{H - 12}" text-anchor="middle">step</text>')
    out.append(f'<text x="16" y="{TOP + ph / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {TOP + ph / 2:.0f})">simple regret</text>')
    for i, c in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        ts = np.arange(1, len(c.mean) + 1)
        upper = " ".join(f"{_fmt(px(t))},{_fmt(py(m + s))}" for t, m, s in zip(ts, c.mean, c.std))
        lower = " ".join(f"{_fmt(px(t))},{_fmt(py(m - s))}"
                         for t, m, s in zip(ts[::-1], c.mean[::-1], c.std[::-1]))
        out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.15" '
                   f'stroke="none"/>')
        line = " ".join(f"{_fmt(px(t))},{_fmt(py(m))}" for t, m in zip(ts, c.mean))
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        label = c.policy if c.ablation_value is None else f"{c.policy} {c.ablation_value:g}"
        ly = TOP + 10 + 16 * i
        out.append(f'<line x1="{W - RIGHT + 10}" y1="{ly}" x2="{W - RIGHT + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - RIGHT + 35}" y="{ly + 4}">{escape(label)} (n={c.n_runs})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def usage_svg(usage: Dict[str, Dict[object, float]], title: str) -> str:
    """Horizontal stacked bars, one per group, segments per source id."""
    keys = sorted({k for u in usage.values() for k in u}, key=lambda k: (k != "none", str(k)))
    colors = {k: ("#bbbbbb" if k == "none" else PALETTE[i % len(PALETTE)])
              for i, k in enumerate(keys)}
    bar, gap = 22, 10
    h = TOP + BOTTOM + len(usage) * (bar + gap)
    pw = W - LEFT - RIGHT - 60
    x0 = LEFT + 60
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{h}" '
           f'viewBox="0 0 {W} {h}" font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{h}" fill="white"/>',
           f'<text x="{W / 2:.0f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>']
    for row, (group, pct) in enumerate(usage.items()):
        y = TOP + row * (bar + gap)
        out.append(f'<text x="{x0 - 6}" y="{y + bar / 2 + 4:.0f}" text-anchor="end">'
                   f'{escape(str(group))}</text>')
        x = float(x0)
        for k in keys:
            w = pw * pct.get(k, 0.0) / 100.0
            if w > 0:
                out.append(f'<rect x="{_fmt(x)}" y="{y}" width="{_fmt(w)}" height="{bar}" '
                           f'fill="{colors[k]}"/>')
            x += w
    for i, k in enumerate(keys):
        ly = TOP + 10 + 16 * i
        out.append(f'<rect x="{W - RIGHT + 10}" y="{ly - 6}" width="12" height="12" '
                   f'fill="{colors[k]}"/>')
        out.append(f'<text x="{W - RIGHT + 28}" y="{ly + 4}">source {escape(str(k))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
