"""Deterministic SVG scene construction.

The plot area carries its data-to-viewport affine map as ``data-*``
attributes: ``x_px = px + (x - xmin) / (xmax - xmin) * pw`` (with
``log10(x)`` first when ``data-xscale="log10"``) and
``y_px = py + ph - (y - ymin) / (ymax - ymin) * ph``.  Coordinates are
written with full round-trip precision, so the map inverts exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

WIDTH, HEIGHT = 640.0, 420.0
PX, PY, PW, PH = 70.0, 30.0, 540.0, 330.0

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2",
)


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass
class Frame:
    """Axes frame with the affine data->viewport mapping."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float
    xscale: str = "linear"  # or "log10"
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""

    def x_px(self, x: float) -> float:
        v = math.log10(x) if self.xscale == "log10" else x
        lo = math.log10(self.xmin) if self.xscale == "log10" else self.xmin
        hi = math.log10(self.xmax) if self.xscale == "log10" else self.xmax
        return PX + (v - lo) / (hi - lo) * PW

    def y_px(self, y: float) -> float:
        return PY + PH - (y - self.ymin) / (self.ymax - self.ymin) * PH


def pad_range(lo: float, hi: float) -> tuple[float, float]:
    """Widen a possibly degenerate range."""
    if hi > lo:
        return lo, hi
    pad = max(abs(lo), 1.0) * 0.5
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, n: int = 6) -> List[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + step * 1e-9:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _tick_label(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.6g}"


@dataclass
class Scene:
    frame: Frame
    parts: List[str] = field(default_factory=list)

    def polyline(self, xs: Sequence[float], ys: Sequence[float], label: str, color: str) -> None:
        points = " ".join(
            f"{_fmt(self.frame.x_px(x))},{_fmt(self.frame.y_px(y))}" for x, y in zip(xs, ys)
        )
        self.parts.append(
            f'<polyline class="curve" data-label="{label}" fill="none" '
            f'stroke="{color}" stroke-width="1.5" points="{points}"/>'
        )

    def point(self, x: float, y: float, color: str, label: Optional[str] = None) -> None:
        tag = f' data-label="{label}"' if label else ""
        self.parts.append(
            f'<circle class="point"{tag} cx="{_fmt(self.frame.x_px(x))}" '
            f'cy="{_fmt(self.frame.y_px(y))}" r="3" fill="{color}"/>'
        )

    def error_bar(self, x: float, y_lo: float, y_hi: float, color: str) -> None:
        cx = _fmt(self.frame.x_px(x))
        self.parts.append(
            f'<line class="errbar" x1="{cx}" x2="{cx}" '
            f'y1="{_fmt(self.frame.y_px(y_lo))}" y2="{_fmt(self.frame.y_px(y_hi))}" '
            f'stroke="{color}" stroke-width="1"/>'
        )

    def rect(self, x0: float, x1: float, y0: float, y1: float, color: str) -> None:
        fx0, fx1 = self.frame.x_px(x0), self.frame.x_px(x1)
        fy0, fy1 = self.frame.y_px(y1), self.frame.y_px(y0)
        self.parts.append(
            f'<rect class="bar" x="{_fmt(fx0)}" y="{_fmt(fy0)}" '
            f'width="{_fmt(fx1 - fx0)}" height="{_fmt(fy1 - fy0)}" '
            f'fill="{color}" fill-opacity="0.7"/>'
        )

    def legend(self, entries: Sequence[tuple[str, str]]) -> None:
        x = PX + PW - 150.0
        y = PY + 14.0
        for i, (label, color) in enumerate(entries):
            yy = y + i * 16.0
            self.parts.append(
                f'<line x1="{_fmt(x)}" x2="{_fmt(x + 22)}" y1="{_fmt(yy - 4)}" '
                f'y2="{_fmt(yy - 4)}" stroke="{color}" stroke-width="2"/>'
            )
            self.parts.append(
                f'<text class="legend" x="{_fmt(x + 28)}" y="{_fmt(yy)}" '
                f'font-size="11">{_escape(label)}</text>'
            )

    def render(self) -> str:
        f = self.frame
        head = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(WIDTH)}" '
            f'height="{int(HEIGHT)}" viewBox="0 0 {int(WIDTH)} {int(HEIGHT)}">',
            '<rect width="100%" height="100%" fill="white"/>',
            (
                '<g id="plot-area" '
                f'data-xmin="{_fmt(f.xmin)}" data-xmax="{_fmt(f.xmax)}" '
                f'data-ymin="{_fmt(f.ymin)}" data-ymax="{_fmt(f.ymax)}" '
                f'data-xscale="{f.xscale}" '
                f'data-px="{_fmt(PX)}" data-py="{_fmt(PY)}" '
                f'data-pw="{_fmt(PW)}" data-ph="{_fmt(PH)}">'
            ),
            f'<rect x="{_fmt(PX)}" y="{_fmt(PY)}" width="{_fmt(PW)}" height="{_fmt(PH)}" '
            'fill="none" stroke="#333" stroke-width="1"/>',
        ]
        axes = []
        if f.xscale == "log10":
            lo_exp = math.ceil(math.log10(f.xmin) - 1e-9)
            hi_exp = math.floor(math.log10(f.xmax) + 1e-9)
            xticks = [10.0**e for e in range(lo_exp, hi_exp + 1)]
        else:
            xticks = _ticks(f.xmin, f.xmax)
        for t in xticks:
            x = f.x_px(t)
            axes.append(
                f'<line x1="{_fmt(x)}" x2="{_fmt(x)}" y1="{_fmt(PY + PH)}" '
                f'y2="{_fmt(PY + PH + 5)}" stroke="#333"/>'
            )
            axes.append(
                f'<text class="xtick" x="{_fmt(x)}" y="{_fmt(PY + PH + 18)}" '
                f'font-size="11" text-anchor="middle">{_tick_label(t)}</text>'
            )
        for t in _ticks(f.ymin, f.ymax):
            y = f.y_px(t)
            axes.append(
                f'<line x1="{_fmt(PX - 5)}" x2="{_fmt(PX)}" y1="{_fmt(y)}" '
                f'y2="{_fmt(y)}" stroke="#333"/>'
            )
            axes.append(
                f'<text class="ytick" x="{_fmt(PX - 8)}" y="{_fmt(y + 4)}" '
                f'font-size="11" text-anchor="end">{_tick_label(t)}</text>'
            )
        labels = []
        if f.xlabel:
            labels.append(
                f'<text x="{_fmt(PX + PW / 2)}" y="{_fmt(HEIGHT - 10)}" font-size="12" '
                f'text-anchor="middle">{_escape(f.xlabel)}</text>'
            )
        if f.ylabel:
            labels.append(
                f'<text x="14" y="{_fmt(PY + PH / 2)}" font-size="12" text-anchor="middle" '
                f'transform="rotate(-90 14 {_fmt(PY + PH / 2)})">{_escape(f.ylabel)}</text>'
            )
        if f.title:
            labels.append(
                f'<text x="{_fmt(PX + PW / 2)}" y="20" font-size="13" '
                f'text-anchor="middle">{_escape(f.title)}</text>'
            )
        return "\n".join(head + axes + self.parts + labels + ["</g>", "</svg>"]) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
