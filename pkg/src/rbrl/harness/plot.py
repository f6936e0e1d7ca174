"""Self-contained SVG line charts: mean curve with a shaded standard-error band."""

from __future__ import annotations

import logging
from html import escape

import numpy as np

from .metrics import mean_and_se

log = logging.getLogger(__name__)

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 50


def align(curves: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, list[np.ndarray]]:
    """Truncate every (steps, values) pair to the shortest length."""
    n = min(len(v) for _, v in curves)
    if n == 0:
        raise ValueError("empty series")
    if any(len(v) != n for _, v in curves):
        log.warning("series lengths differ %s; truncating to %d points", [len(v) for _, v in curves], n)
    return np.asarray(curves[0][0][:n], dtype=float), [np.asarray(v[:n], dtype=float) for _, v in curves]


def band(curves: list[tuple[np.ndarray, np.ndarray]]):
    x, ys = align(curves)
    mean, se = mean_and_se(ys)
    return x, mean, se


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def render_svg(groups: dict[str, list[tuple[np.ndarray, np.ndarray]]], title: str = "", ylabel: str = "") -> str:
    if not groups:
        raise ValueError("nothing to plot")
    bands = {label: band(curves) for label, curves in groups.items()}
    xs = np.concatenate([b[0] for b in bands.values()])
    lo = np.concatenate([b[1] - b[2] for b in bands.values()])
    hi = np.concatenate([b[1] + b[2] for b in bands.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(lo.min()), float(hi.max())
    if x1 == x0:
        x0, x1 = x0 - 1.0, x1 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(x):
        return LEFT + (np.asarray(x) - x0) / (x1 - x0) * pw

    def py(y):
        return TOP + (1.0 - (np.asarray(y) - y0) / (y1 - y0)) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{W / 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
             f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
             f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>']
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        parts.append(f'<text x="{px(xv):.2f}" y="{TOP + ph + 18}" text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{_fmt(xv)}</text>')
        parts.append(f'<text x="{LEFT - 6}" y="{py(yv) + 4:.2f}" text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{_fmt(yv)}</text>')
    parts.append(f'<text x="{LEFT + pw / 2}" y="{H - 10}" text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12">step</text>')
    parts.append(f'<text x="16" y="{TOP + ph / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 16 {TOP + ph / 2})">{escape(ylabel)}</text>')
    for i, (label, (x, mean, se)) in enumerate(bands.items()):
        color = COLORS[i % len(COLORS)]
        upper = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(x), py(mean + se)))
        lower = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(x)[::-1], py(mean - se)[::-1]))
        parts.append(f'<polygon class="band" points="{upper} {lower}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(x), py(mean)))
        parts.append(f'<polyline class="mean" points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = TOP + 14 + 16 * i
        parts.append(f'<line x1="{LEFT + pw - 130}" y1="{ly}" x2="{LEFT + pw - 110}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{LEFT + pw - 105}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
