"""Minimal self-contained SVG line charts (no external plotting dependency)."""

from __future__ import annotations

import math
from typing import List, Sequence, Tuple

__all__ = ["line_chart"]

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]

_WIDTH, _HEIGHT = 900.0, 560.0
_LEFT, _RIGHT, _TOP, _BOTTOM = 90.0, 30.0, 40.0, 60.0


def _tick_values(lo: float, hi: float, target: int = 6) -> List[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    magnitude = 10.0 ** math.floor(math.log10(raw))
    step = 10.0 * magnitude
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if (hi - lo) / (mult * magnitude) <= target:
            step = mult * magnitude
            break
    first = math.ceil(lo / step) * step
    ticks = []
    value = first
    while value <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(value) < 1e-12 * step else value)
        value += step
    return ticks


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def line_chart(
    series: Sequence[Tuple[str, Sequence[float], Sequence[float]]],
    xlabel: str = "",
    ylabel: str = "",
    title: str = "",
    header_comment: str = "",
) -> str:
    """Render labelled (x, y) series as a standalone SVG document string."""
    if not series:
        raise ValueError("need at least one series to plot")

    xs_all = [float(v) for _, xs, _ in series for v in xs]
    ys_all = [float(v) for _, _, ys in series for v in ys]
    if not xs_all:
        raise ValueError("series are empty")
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    plot_w = _WIDTH - _LEFT - _RIGHT
    plot_h = _HEIGHT - _TOP - _BOTTOM

    def sx(v: float) -> float:
        return _LEFT + (v - x_lo) / (x_hi - x_lo) * plot_w

    def sy(v: float) -> float:
        return _TOP + (y_hi - v) / (y_hi - y_lo) * plot_h

    parts = []
    if header_comment:
        parts.append(f"<!-- {header_comment} -->")
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_WIDTH:g} {_HEIGHT:g}" '
        f'font-family="sans-serif" font-size="13">'
    )
    parts.append(f'<rect width="{_WIDTH:g}" height="{_HEIGHT:g}" fill="white"/>')

    for tick in _tick_values(x_lo, x_hi):
        px = sx(tick)
        parts.append(
            f'<line x1="{px:.2f}" y1="{_TOP:.2f}" x2="{px:.2f}" y2="{_TOP + plot_h:.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{px:.2f}" y="{_TOP + plot_h + 20:.2f}" text-anchor="middle">{_fmt(tick)}</text>'
        )
    for tick in _tick_values(y_lo, y_hi):
        py = sy(tick)
        parts.append(
            f'<line x1="{_LEFT:.2f}" y1="{py:.2f}" x2="{_LEFT + plot_w:.2f}" y2="{py:.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_LEFT - 8:.2f}" y="{py + 4:.2f}" text-anchor="end">{_fmt(tick)}</text>'
        )

    parts.append(
        f'<rect x="{_LEFT:.2f}" y="{_TOP:.2f}" width="{plot_w:.2f}" height="{plot_h:.2f}" '
        f'fill="none" stroke="#333333"/>'
    )

    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(float(x)):.2f},{sy(float(y)):.2f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.6"/>'
        )
        ly = _TOP + 16 + 18 * i
        lx = _LEFT + plot_w - 180
        parts.append(
            f'<line x1="{lx:.2f}" y1="{ly - 4:.2f}" x2="{lx + 24:.2f}" y2="{ly - 4:.2f}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{lx + 30:.2f}" y="{ly:.2f}">{label}</text>')

    if title:
        parts.append(
            f'<text x="{_WIDTH / 2:.2f}" y="24" text-anchor="middle" font-size="16">{title}</text>'
        )
    if xlabel:
        parts.append(
            f'<text x="{_LEFT + plot_w / 2:.2f}" y="{_HEIGHT - 16:.2f}" text-anchor="middle">{xlabel}</text>'
        )
    if ylabel:
        parts.append(
            f'<text x="20" y="{_TOP + plot_h / 2:.2f}" text-anchor="middle" '
            f'transform="rotate(-90 20 {_TOP + plot_h / 2:.2f})">{ylabel}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
