"""Minimal static SVG bar/line charts with deterministic byte output.

No plotting dependency: identical input data always yields identical files,
so chart artifacts can be diffed and hashed like any other report output.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

WIDTH, HEIGHT = 720, 420
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 30, 50, 70

_PALETTE = ("#4878cf", "#d65f5f", "#6acc65", "#b47cc7", "#c4ad66", "#77bedb")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _axis_range(values: Sequence[float]) -> tuple[float, float]:
    lo = min(0.0, min(values))
    hi = max(0.0, max(values))
    if lo == hi:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    return lo - (pad if lo < 0 else 0.0), hi + pad


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="28" text-anchor="middle" font-size="16">{title}</text>',
    ]


def _axes(y_lo: float, y_hi: float, ylabel: str, xlabel: str) -> tuple[list[str], float, float]:
    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def y_px(v: float) -> float:
        return MARGIN_TOP + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo))

    parts = []
    x0, x1 = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
    parts.append(f'<line x1="{x0}" y1="{MARGIN_TOP}" x2="{x0}" '
                 f'y2="{HEIGHT - MARGIN_BOTTOM}" stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{_fmt(y_px(0.0) if y_lo < 0 else HEIGHT - MARGIN_BOTTOM)}" '
                 f'x2="{x1}" y2="{_fmt(y_px(0.0) if y_lo < 0 else HEIGHT - MARGIN_BOTTOM)}" '
                 f'stroke="black"/>')
    for i in range(5):
        v = y_lo + (y_hi - y_lo) * i / 4
        parts.append(f'<line x1="{x0 - 4}" y1="{_fmt(y_px(v))}" x2="{x0}" '
                     f'y2="{_fmt(y_px(v))}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 8}" y="{_fmt(y_px(v) + 4)}" text-anchor="end" '
                     f'font-size="11">{_fmt(v)}</text>')
    parts.append(f'<text x="16" y="{HEIGHT / 2:.0f}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 16 {HEIGHT / 2:.0f})">{ylabel}</text>')
    parts.append(f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle" '
                 f'font-size="12">{xlabel}</text>')
    return parts, plot_w, plot_h


def bar_chart(labels: Sequence[str], values: Sequence[float], *, title: str,
              ylabel: str, xlabel: str, path: str | Path) -> None:
    """One <rect class="bar"> per value, with axes, ticks, and labels."""
    if not labels or len(labels) != len(values):
        raise ValueError("bar_chart needs equal, non-empty labels and values")
    y_lo, y_hi = _axis_range(values)
    parts = _header(title)
    axis_parts, plot_w, plot_h = _axes(y_lo, y_hi, ylabel, xlabel)

    def y_px(v: float) -> float:
        return MARGIN_TOP + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo))

    n = len(values)
    slot = plot_w / n
    bar_w = slot * 0.6
    baseline = y_px(max(0.0, y_lo))
    for i, (label, v) in enumerate(zip(labels, values)):
        x = MARGIN_LEFT + slot * i + (slot - bar_w) / 2
        top = min(y_px(v), baseline)
        h = abs(y_px(v) - baseline)
        parts.append(f'<rect class="bar" x="{_fmt(x)}" y="{_fmt(top)}" '
                     f'width="{_fmt(bar_w)}" height="{_fmt(h)}" fill="{_PALETTE[0]}"/>')
        cx = x + bar_w / 2
        parts.append(f'<text x="{_fmt(cx)}" y="{HEIGHT - MARGIN_BOTTOM + 16}" '
                     f'text-anchor="middle" font-size="11">{label}</text>')
    parts.extend(axis_parts)
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def line_chart(x_labels: Sequence[str], series: dict[str, Sequence[float]], *,
               title: str, ylabel: str, xlabel: str, path: str | Path) -> None:
    """One <polyline class="series"> per named series plus a legend."""
    if not x_labels or not series:
        raise ValueError("line_chart needs x labels and at least one series")
    for name, vals in series.items():
        if len(vals) != len(x_labels):
            raise ValueError(f"series {name!r} length {len(vals)} != {len(x_labels)} labels")
    all_values = [v for vals in series.values() for v in vals]
    y_lo, y_hi = _axis_range(all_values)
    parts = _header(title)
    axis_parts, plot_w, plot_h = _axes(y_lo, y_hi, ylabel, xlabel)

    def y_px(v: float) -> float:
        return MARGIN_TOP + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo))

    def x_px(i: int) -> float:
        if len(x_labels) == 1:
            return MARGIN_LEFT + plot_w / 2
        return MARGIN_LEFT + plot_w * i / (len(x_labels) - 1)

    for i, label in enumerate(x_labels):
        parts.append(f'<text x="{_fmt(x_px(i))}" y="{HEIGHT - MARGIN_BOTTOM + 16}" '
                     f'text-anchor="middle" font-size="11">{label}</text>')
    for si, (name, vals) in enumerate(sorted(series.items())):
        color = _PALETTE[si % len(_PALETTE)]
        points = " ".join(f"{_fmt(x_px(i))},{_fmt(y_px(v))}" for i, v in enumerate(vals))
        parts.append(f'<polyline class="series" fill="none" stroke="{color}" '
                     f'stroke-width="2" points="{points}"/>')
        ly = MARGIN_TOP + 14 * si
        parts.append(f'<line x1="{WIDTH - MARGIN_RIGHT - 120}" y1="{ly}" '
                     f'x2="{WIDTH - MARGIN_RIGHT - 100}" y2="{ly}" stroke="{color}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{WIDTH - MARGIN_RIGHT - 94}" y="{ly + 4}" '
                     f'font-size="11">{name}</text>')
    parts.extend(axis_parts)
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
