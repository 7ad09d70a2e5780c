"""Minimal SVG line plots (polyline-based, no external renderer).

Good enough for the experiment summary figures: multiple labelled series
per panel, linear or log10 y-axis, dashed reference lines, and simple tick
labels. Panels stack vertically into a single SVG document.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Series", "Panel", "write_svg"]

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
    "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
)

PANEL_W = 760
PANEL_H = 300
MARGIN_L = 70
MARGIN_R = 170
MARGIN_T = 40
MARGIN_B = 45


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str
    color: str | None = None
    dashed: bool = False


@dataclass
class Panel:
    title: str
    xlabel: str
    ylabel: str
    series: list[Series] = field(default_factory=list)
    logy: bool = False

    def add(self, x, y, label: str, color: str | None = None, dashed: bool = False):
        self.series.append(
            Series(np.asarray(x, float), np.asarray(y, float), label, color, dashed)
        )
        return self


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-12 * max(1.0, abs(hi)):
        out.append(0.0 if abs(t) < step * 1e-9 else t)
        t += step
    return out


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _panel_svg(panel: Panel, y_off: int) -> list[str]:
    xs = [s.x[np.isfinite(s.x)] for s in panel.series if s.x.size]
    ys = []
    for s in panel.series:
        valid = np.isfinite(s.y)
        if panel.logy:
            valid &= s.y > 0.0
        ys.append(s.y[valid])
    xs = [a for a in xs if a.size]
    ys = [a for a in ys if a.size]
    x_lo = min((a.min() for a in xs), default=0.0)
    x_hi = max((a.max() for a in xs), default=1.0)
    if panel.logy:
        y_lo = math.log10(min((a.min() for a in ys), default=0.1))
        y_hi = math.log10(max((a.max() for a in ys), default=1.0))
    else:
        y_lo = min((a.min() for a in ys), default=0.0)
        y_hi = max((a.max() for a in ys), default=1.0)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    plot_w = PANEL_W - MARGIN_L - MARGIN_R
    plot_h = PANEL_H - MARGIN_T - MARGIN_B

    def px(x: float) -> float:
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        yv = math.log10(y) if panel.logy else y
        return y_off + MARGIN_T + plot_h - (yv - y_lo) / (y_hi - y_lo) * plot_h

    out = [
        f'<text x="{MARGIN_L}" y="{y_off + 22}" font-size="15" font-weight="bold">{panel.title}</text>',
        f'<rect x="{MARGIN_L}" y="{y_off + MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        x = px(t)
        out.append(
            f'<line x1="{x:.1f}" y1="{y_off + MARGIN_T + plot_h}" x2="{x:.1f}" '
            f'y2="{y_off + MARGIN_T + plot_h + 4}" stroke="#333"/>'
        )
        out.append(
            f'<text x="{x:.1f}" y="{y_off + MARGIN_T + plot_h + 18}" font-size="11" '
            f'text-anchor="middle">{_fmt(t)}</text>'
        )
    y_ticks = _ticks(y_lo, y_hi)
    for t in y_ticks:
        val = 10.0**t if panel.logy else t
        y = py(val) if not panel.logy else y_off + MARGIN_T + plot_h - (t - y_lo) / (y_hi - y_lo) * plot_h
        label = f"1e{t:.0f}" if panel.logy else _fmt(t)
        out.append(
            f'<line x1="{MARGIN_L - 4}" y1="{y:.1f}" x2="{MARGIN_L}" y2="{y:.1f}" stroke="#333"/>'
        )
        out.append(
            f'<text x="{MARGIN_L - 8}" y="{y + 4:.1f}" font-size="11" text-anchor="end">{label}</text>'
        )
    out.append(
        f'<text x="{MARGIN_L + plot_w / 2:.1f}" y="{y_off + PANEL_H - 8}" font-size="12" '
        f'text-anchor="middle">{panel.xlabel}</text>'
    )
    out.append(
        f'<text x="16" y="{y_off + MARGIN_T + plot_h / 2:.1f}" font-size="12" '
        f'text-anchor="middle" transform="rotate(-90 16 {y_off + MARGIN_T + plot_h / 2:.1f})">'
        f"{panel.ylabel}</text>"
    )

    legend_y = y_off + MARGIN_T + 8
    for i, s in enumerate(panel.series):
        color = s.color or PALETTE[i % len(PALETTE)]
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        valid = np.isfinite(s.x) & np.isfinite(s.y)
        if panel.logy:
            valid &= s.y > 0.0
        pieces: list[list[str]] = [[]]
        for ok, xv, yv in zip(valid, s.x, s.y):
            if ok:
                pieces[-1].append(f"{px(xv):.1f},{py(yv):.1f}")
            elif pieces[-1]:
                pieces.append([])
        for pts in pieces:
            if len(pts) >= 2:
                out.append(
                    f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" '
                    f'stroke-width="1.4"{dash}/>'
                )
        lx = MARGIN_L + plot_w + 12
        out.append(
            f'<line x1="{lx}" y1="{legend_y}" x2="{lx + 22}" y2="{legend_y}" '
            f'stroke="{color}" stroke-width="2"{dash}/>'
        )
        out.append(
            f'<text x="{lx + 28}" y="{legend_y + 4}" font-size="11">{s.label}</text>'
        )
        legend_y += 16
    return out


def write_svg(path, panels: list[Panel]) -> None:
    """Write stacked panels as one standalone SVG file."""
    height = PANEL_H * len(panels)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{height}" '
        f'viewBox="0 0 {PANEL_W} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for i, panel in enumerate(panels):
        parts.extend(_panel_svg(panel, i * PANEL_H))
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))
