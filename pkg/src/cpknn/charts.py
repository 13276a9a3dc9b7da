"""Minimal hand-rolled SVG charts (no plotting dependency).

Line charts take named (x, y) series plus an optional dashed reference
series (used for the 1 - epsilon validity diagonal); bar charts take a
name -> value mapping. Output is a standalone SVG document string.
"""

from __future__ import annotations

from typing import Mapping, Sequence
from xml.sax.saxutils import escape

Point = tuple[float, float]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_MARGIN_LEFT = 62
_MARGIN_RIGHT = 16
_MARGIN_TOP = 34
_MARGIN_BOTTOM = 46


def _fmt(x: float) -> str:
    return f"{x:.6g}"


class _Frame:
    """Maps data coordinates into the SVG plot rectangle (y grows upward)."""

    def __init__(self, xs, ys, width, height):
        self.x0, self.x1 = min(xs), max(xs)
        self.y0, self.y1 = min(ys), max(ys)
        if self.x1 == self.x0:
            self.x0, self.x1 = self.x0 - 0.5, self.x1 + 0.5
        if self.y1 == self.y0:
            self.y0, self.y1 = self.y0 - 0.5, self.y1 + 0.5
        pad = 0.04 * (self.y1 - self.y0)
        self.y0 -= pad
        self.y1 += pad
        self.left = _MARGIN_LEFT
        self.top = _MARGIN_TOP
        self.right = width - _MARGIN_RIGHT
        self.bottom = height - _MARGIN_BOTTOM

    def px(self, x: float) -> float:
        return self.left + (x - self.x0) / (self.x1 - self.x0) * (self.right - self.left)

    def py(self, y: float) -> float:
        return self.bottom - (y - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)

    def ticks(self, n: int = 6) -> tuple[list[float], list[float]]:
        xs = [self.x0 + i * (self.x1 - self.x0) / (n - 1) for i in range(n)]
        ys = [self.y0 + i * (self.y1 - self.y0) / (n - 1) for i in range(n)]
        return xs, ys


def _axes(frame: _Frame, title: str, x_label: str, y_label: str) -> list[str]:
    parts = [
        f'<rect x="{frame.left}" y="{frame.top}" width="{frame.right - frame.left}" '
        f'height="{frame.bottom - frame.top}" fill="none" stroke="#444"/>'
    ]
    xticks, yticks = frame.ticks()
    for x in xticks:
        px = frame.px(x)
        parts.append(
            f'<line x1="{px:.1f}" y1="{frame.bottom}" x2="{px:.1f}" '
            f'y2="{frame.bottom + 4}" stroke="#444"/>'
        )
        parts.append(
            f'<text x="{px:.1f}" y="{frame.bottom + 18}" font-size="11" '
            f'text-anchor="middle">{_fmt(x)}</text>'
        )
    for y in yticks:
        py = frame.py(y)
        parts.append(
            f'<line x1="{frame.left - 4}" y1="{py:.1f}" x2="{frame.left}" '
            f'y2="{py:.1f}" stroke="#444"/>'
        )
        parts.append(
            f'<text x="{frame.left - 8}" y="{py + 4:.1f}" font-size="11" '
            f'text-anchor="end">{_fmt(y)}</text>'
        )
    mid_x = (frame.left + frame.right) / 2
    if title:
        parts.append(
            f'<text x="{mid_x:.1f}" y="20" font-size="14" text-anchor="middle" '
            f'font-weight="bold">{escape(title)}</text>'
        )
    if x_label:
        parts.append(
            f'<text x="{mid_x:.1f}" y="{frame.bottom + 36}" font-size="12" '
            f'text-anchor="middle">{escape(x_label)}</text>'
        )
    if y_label:
        mid_y = (frame.top + frame.bottom) / 2
        parts.append(
            f'<text x="16" y="{mid_y:.1f}" font-size="12" text-anchor="middle" '
            f'transform="rotate(-90 16 {mid_y:.1f})">{escape(y_label)}</text>'
        )
    return parts


def _polyline(frame: _Frame, points: Sequence[Point], color: str, dashed: bool) -> str:
    coords = " ".join(f"{frame.px(x):.2f},{frame.py(y):.2f}" for x, y in points)
    dash = ' stroke-dasharray="6,4"' if dashed else ""
    return f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>'


def line_chart(
    series: Mapping[str, Sequence[Point]],
    *,
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    reference: Sequence[Point] | None = None,
    reference_label: str = "reference",
    width: int = 640,
    height: int = 420,
) -> str:
    """Named line series on shared axes; the reference series is dashed gray."""
    if not series:
        raise ValueError("line_chart needs at least one series")
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if reference:
        xs += [x for x, _ in reference]
        ys += [y for _, y in reference]
    frame = _Frame(xs, ys, width, height)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    parts += _axes(frame, title, x_label, y_label)
    legend: list[tuple[str, str, bool]] = []
    if reference:
        parts.append(_polyline(frame, reference, "#888", dashed=True))
        legend.append((reference_label, "#888", True))
    for i, (name, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        parts.append(_polyline(frame, pts, color, dashed=False))
        legend.append((name, color, False))

    ly = frame.top + 14
    for name, color, dashed in legend:
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        lx = frame.left + 12
        parts.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 26}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="1.5"{dash}/>'
        )
        parts.append(f'<text x="{lx + 32}" y="{ly}" font-size="11">{escape(name)}</text>')
        ly += 16
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_chart(
    values: Mapping[str, float],
    *,
    title: str = "",
    y_label: str = "",
    width: int = 640,
    height: int = 420,
) -> str:
    """One bar per named value, baseline at zero."""
    if not values:
        raise ValueError("bar_chart needs at least one value")
    ys = list(values.values()) + [0.0]
    frame = _Frame([0.0, 1.0], ys, width, height)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    parts += _axes(frame, title, "", y_label)
    n = len(values)
    span = frame.right - frame.left
    slot = span / n
    bar_w = slot * 0.6
    base = frame.py(0.0)
    for i, (name, v) in enumerate(values.items()):
        cx = frame.left + (i + 0.5) * slot
        top = frame.py(v)
        y, h = (top, base - top) if v >= 0 else (base, top - base)
        parts.append(
            f'<rect x="{cx - bar_w / 2:.1f}" y="{y:.1f}" width="{bar_w:.1f}" '
            f'height="{h:.1f}" fill="{PALETTE[i % len(PALETTE)]}"/>'
        )
        parts.append(
            f'<text x="{cx:.1f}" y="{frame.bottom + 18}" font-size="11" '
            f'text-anchor="middle">{escape(name)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
