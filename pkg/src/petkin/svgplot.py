"""Minimal deterministic SVG plotting: fixed 800x600 canvas, no timestamps.

Text output is byte-reproducible for identical inputs, which lets plot files
serve as golden artifacts in tests.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

WIDTH, HEIGHT = 800, 600
_MARGIN = {"left": 80, "right": 30, "top": 50, "bottom": 60}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


class _Frame:
    """Plot area with data-to-pixel transforms and axis decorations."""

    def __init__(self, xlim: tuple[float, float], ylim: tuple[float, float]) -> None:
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        self.px0 = _MARGIN["left"]
        self.px1 = WIDTH - _MARGIN["right"]
        self.py0 = HEIGHT - _MARGIN["bottom"]
        self.py1 = _MARGIN["top"]

    def x(self, v: float) -> float:
        return self.px0 + (v - self.x0) / (self.x1 - self.x0) * (self.px1 - self.px0)

    def y(self, v: float) -> float:
        return self.py0 + (v - self.y0) / (self.y1 - self.y0) * (self.py1 - self.py0)

    def axes(self, title: str, xlabel: str, ylabel: str) -> list[str]:
        e = [
            f'<rect x="{self.px0}" y="{self.py1}" width="{self.px1 - self.px0}" '
            f'height="{self.py0 - self.py1}" fill="none" stroke="#333333" stroke-width="1"/>',
            f'<text x="{WIDTH // 2}" y="28" text-anchor="middle" font-size="18" '
            f'font-family="sans-serif">{title}</text>',
            f'<text x="{(self.px0 + self.px1) // 2}" y="{HEIGHT - 14}" text-anchor="middle" '
            f'font-size="14" font-family="sans-serif">{xlabel}</text>',
            f'<text x="20" y="{(self.py0 + self.py1) // 2}" text-anchor="middle" font-size="14" '
            f'font-family="sans-serif" transform="rotate(-90 20 {(self.py0 + self.py1) // 2})">{ylabel}</text>',
        ]
        for tx in _ticks(self.x0, self.x1):
            px = self.x(tx)
            e.append(
                f'<line x1="{_fmt(px)}" y1="{self.py0}" x2="{_fmt(px)}" y2="{self.py0 + 5}" '
                f'stroke="#333333" stroke-width="1"/>'
            )
            e.append(
                f'<text x="{_fmt(px)}" y="{self.py0 + 20}" text-anchor="middle" font-size="12" '
                f'font-family="sans-serif">{_fmt(tx)}</text>'
            )
        for ty in _ticks(self.y0, self.y1):
            py = self.y(ty)
            e.append(
                f'<line x1="{self.px0 - 5}" y1="{_fmt(py)}" x2="{self.px0}" y2="{_fmt(py)}" '
                f'stroke="#333333" stroke-width="1"/>'
            )
            e.append(
                f'<text x="{self.px0 - 8}" y="{_fmt(py + 4)}" text-anchor="end" font-size="12" '
                f'font-family="sans-serif">{_fmt(ty)}</text>'
            )
        return e


def _document(elements: list[str]) -> str:
    body = "\n".join(elements)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>\n'
        f"{body}\n</svg>\n"
    )


def _legend(frame: _Frame, entries: list[tuple[str, str]]) -> list[str]:
    e = []
    for i, (label, color) in enumerate(entries):
        y = frame.py1 + 16 + 18 * i
        x = frame.px1 - 190
        e.append(f'<line x1="{x}" y1="{y}" x2="{x + 28}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        e.append(
            f'<text x="{x + 34}" y="{y + 4}" font-size="12" font-family="sans-serif">{label}</text>'
        )
    return e


def curve_overlay(curves: list[tuple[str, np.ndarray, np.ndarray]], title: str, xlabel: str, ylabel: str) -> str:
    """Polyline overlay of (label, x, y) series with a legend."""
    if not curves or any(len(x) == 0 for _, x, _ in curves):
        raise ValidationError("plot needs at least one non-empty data series")
    all_x = np.concatenate([x for _, x, _ in curves])
    all_y = np.concatenate([y for _, _, y in curves])
    frame = _Frame((float(all_x.min()), float(all_x.max())), (float(all_y.min()), float(all_y.max())))
    elements = frame.axes(title, xlabel, ylabel)
    legend = []
    for i, (label, x, y) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_fmt(frame.x(a))},{_fmt(frame.y(b))}" for a, b in zip(x, y))
        elements.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        legend.append((label, color))
    elements.extend(_legend(frame, legend))
    return _document(elements)


def identity_scatter(measured: np.ndarray, estimated: np.ndarray, title: str, xlabel: str, ylabel: str) -> str:
    """Measured-vs-estimated scatter with a dashed identity line."""
    if len(measured) == 0:
        raise ValidationError("plot needs at least one non-empty data series")
    lo = float(min(measured.min(), estimated.min()))
    hi = float(max(measured.max(), estimated.max()))
    frame = _Frame((lo, hi), (lo, hi))
    elements = frame.axes(title, xlabel, ylabel)
    elements.append(
        f'<line x1="{_fmt(frame.x(lo))}" y1="{_fmt(frame.y(lo))}" x2="{_fmt(frame.x(hi))}" '
        f'y2="{_fmt(frame.y(hi))}" stroke="#555555" stroke-width="1.5" stroke-dasharray="8,6"/>'
    )
    for m, e in zip(measured, estimated):
        elements.append(
            f'<circle cx="{_fmt(frame.x(m))}" cy="{_fmt(frame.y(e))}" r="4" fill="{PALETTE[0]}" '
            f'fill-opacity="0.7"/>'
        )
    elements.extend(_legend(frame, [("identity line", "#555555")]))
    return _document(elements)


def map_slice(slice2d: np.ndarray, title: str, units: str) -> str:
    """Grayscale raster of a 2-D slice with a colorbar; uniform input gives one color."""
    img = np.asarray(slice2d, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValidationError("map slice must be a non-empty 2-D array")
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo
    norm = np.zeros_like(img) if span == 0 else (img - lo) / span
    h, w = img.shape
    area_w = WIDTH - _MARGIN["left"] - _MARGIN["right"] - 70
    area_h = HEIGHT - _MARGIN["top"] - _MARGIN["bottom"]
    cell = min(area_w / w, area_h / h)
    ox, oy = _MARGIN["left"], _MARGIN["top"]
    elements = [
        f'<text x="{WIDTH // 2}" y="28" text-anchor="middle" font-size="18" '
        f'font-family="sans-serif">{title}</text>'
    ]
    for iy in range(h):
        for ix in range(w):
            g = int(round(255 * norm[iy, ix]))
            elements.append(
                f'<rect x="{_fmt(ox + ix * cell)}" y="{_fmt(oy + iy * cell)}" '
                f'width="{_fmt(cell)}" height="{_fmt(cell)}" fill="rgb({g},{g},{g})"/>'
            )
    # colorbar
    bar_x = ox + w * cell + 24
    bar_h = h * cell
    steps = 64
    for i in range(steps):
        g = int(round(255 * (1 - i / (steps - 1)))) if span else 128
        elements.append(
            f'<rect x="{_fmt(bar_x)}" y="{_fmt(oy + i * bar_h / steps)}" width="18" '
            f'height="{_fmt(bar_h / steps + 0.5)}" fill="rgb({g},{g},{g})"/>'
        )
    elements.append(
        f'<rect x="{_fmt(bar_x)}" y="{_fmt(oy)}" width="18" height="{_fmt(bar_h)}" '
        f'fill="none" stroke="#333333" stroke-width="1"/>'
    )
    elements.append(
        f'<text x="{_fmt(bar_x + 24)}" y="{_fmt(oy + 10)}" font-size="12" '
        f'font-family="sans-serif">{_fmt(hi)} {units}</text>'
    )
    elements.append(
        f'<text x="{_fmt(bar_x + 24)}" y="{_fmt(oy + bar_h)}" font-size="12" '
        f'font-family="sans-serif">{_fmt(lo)} {units}</text>'
    )
    return _document(elements)
