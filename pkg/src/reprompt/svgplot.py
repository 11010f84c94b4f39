"""Tiny dependency-free SVG chart writer.

Only the handful of chart shapes the CLI needs: line plots with optional
confidence bands, and grouped bar charts. Coordinates are formatted with
a fixed precision so identical inputs always produce identical bytes.
"""

from __future__ import annotations

from typing import Sequence

_WIDTH = 720
_HEIGHT = 440
_MARGIN_L = 64
_MARGIN_R = 24
_MARGIN_T = 36
_MARGIN_B = 52

_PALETTE = ("#3465a4", "#cc0000", "#4e9a06", "#f57900", "#75507b", "#555753")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _esc(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


class _Canvas:
    def __init__(self, title: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
            f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
            f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="#ffffff"/>',
            f'<text x="{_WIDTH // 2}" y="22" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{_esc(title)}</text>',
        ]

    def line(self, x1, y1, x2, y2, color="#888888", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{color}" stroke-width="{width}"{d}/>')

    def polyline(self, pts, color, width=1.6):
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"/>')

    def polygon(self, pts, fill, opacity=0.18):
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        self.parts.append(
            f'<polygon points="{coords}" fill="{fill}" fill-opacity="{opacity}" '
            f'stroke="none"/>')

    def rect(self, x, y, w, h, fill):
        self.parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
            f'height="{_fmt(h)}" fill="{fill}"/>')

    def text(self, x, y, s, size=11, anchor="middle", color="#222222"):
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" text-anchor="{anchor}" '
            f'font-family="sans-serif" font-size="{size}" fill="{color}">{_esc(s)}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = span / max(1, n - 1)
    return [lo + i * step for i in range(n)]


class _Scale:
    def __init__(self, x_lo, x_hi, y_lo, y_hi):
        self.x_lo, self.x_hi = x_lo, max(x_hi, x_lo + 1e-9)
        self.y_lo, self.y_hi = y_lo, max(y_hi, y_lo + 1e-9)

    def x(self, v):
        frac = (v - self.x_lo) / (self.x_hi - self.x_lo)
        return _MARGIN_L + frac * (_WIDTH - _MARGIN_L - _MARGIN_R)

    def y(self, v):
        frac = (v - self.y_lo) / (self.y_hi - self.y_lo)
        return _HEIGHT - _MARGIN_B - frac * (_HEIGHT - _MARGIN_T - _MARGIN_B)


def _axes(canvas: _Canvas, scale: _Scale, x_label: str, y_label: str):
    x0, x1 = _MARGIN_L, _WIDTH - _MARGIN_R
    y0, y1 = _HEIGHT - _MARGIN_B, _MARGIN_T
    canvas.line(x0, y0, x1, y0, "#333333", 1.2)
    canvas.line(x0, y0, x0, y1, "#333333", 1.2)
    for tx in _ticks(scale.x_lo, scale.x_hi):
        px = scale.x(tx)
        canvas.line(px, y0, px, y0 + 4, "#333333", 1.0)
        canvas.text(px, y0 + 18, f"{tx:g}" if abs(tx) < 1e4 else f"{tx:.2g}")
    for ty in _ticks(scale.y_lo, scale.y_hi):
        py = scale.y(ty)
        canvas.line(x0 - 4, py, x0, py, "#333333", 1.0)
        canvas.line(x0, py, x1, py, "#e0e0e0", 0.6)
        canvas.text(x0 - 8, py + 4, f"{ty:.3g}", anchor="end")
    canvas.text((x0 + x1) / 2, _HEIGHT - 14, x_label, size=12)
    canvas.parts.append(
        f'<text x="18" y="{(y0 + y1) / 2:.2f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" fill="#222222" '
        f'transform="rotate(-90 18 {(y0 + y1) / 2:.2f})">{_esc(y_label)}</text>')


def _legend(canvas: _Canvas, labels: Sequence[str]):
    x = _MARGIN_L + 10
    y = _MARGIN_T + 8
    for i, label in enumerate(labels):
        color = _PALETTE[i % len(_PALETTE)]
        canvas.line(x, y + 16 * i, x + 18, y + 16 * i, color, 2.0)
        canvas.text(x + 24, y + 16 * i + 4, label, size=11, anchor="start")


def line_chart(series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
               title: str, x_label: str, y_label: str,
               bands: Sequence[Sequence[float] | None] | None = None) -> str:
    """Multi-series line chart. ``bands[i]`` is an optional half-width array
    drawn as a translucent ribbon around series ``i``."""
    if not series:
        raise ValueError("no series")
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if bands:
        for (label, xs, ys), band in zip(series, bands):
            if band is not None:
                ys_all.extend(y + b for y, b in zip(ys, band))
                ys_all.extend(y - b for y, b in zip(ys, band))
    pad = 0.05 * (max(ys_all) - min(ys_all) or 1.0)
    scale = _Scale(min(xs_all), max(xs_all), min(ys_all) - pad, max(ys_all) + pad)
    canvas = _Canvas(title)
    _axes(canvas, scale, x_label, y_label)
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        band = bands[i] if bands else None
        if band is not None:
            upper = [(scale.x(x), scale.y(y + b)) for x, y, b in zip(xs, ys, band)]
            lower = [(scale.x(x), scale.y(y - b)) for x, y, b in zip(xs, ys, band)]
            canvas.polygon(upper + lower[::-1], color)
        canvas.polyline([(scale.x(x), scale.y(y)) for x, y in zip(xs, ys)], color)
    _legend(canvas, [label for label, _, _ in series])
    return canvas.render()


def bar_chart(labels: Sequence[str], values: Sequence[float], title: str,
              y_label: str, errors: Sequence[float] | None = None) -> str:
    """Single-group bar chart with optional symmetric error whiskers."""
    if len(labels) != len(values):
        raise ValueError("labels and values must align")
    hi = max(list(values) + ([v + e for v, e in zip(values, errors)] if errors else []))
    lo = min(0.0, min(values))
    scale = _Scale(0.0, float(len(values)), lo, hi * 1.08 if hi > 0 else 1.0)
    canvas = _Canvas(title)
    _axes(canvas, scale, "", y_label)
    slot = (_WIDTH - _MARGIN_L - _MARGIN_R) / len(values)
    bar_w = slot * 0.6
    base_y = scale.y(0.0)
    for i, (label, value) in enumerate(zip(labels, values)):
        cx = _MARGIN_L + slot * (i + 0.5)
        top = scale.y(value)
        canvas.rect(cx - bar_w / 2, min(top, base_y), bar_w, abs(base_y - top),
                    _PALETTE[i % len(_PALETTE)])
        if errors is not None:
            e = errors[i]
            canvas.line(cx, scale.y(value - e), cx, scale.y(value + e), "#222222", 1.2)
            canvas.line(cx - 5, scale.y(value + e), cx + 5, scale.y(value + e), "#222222", 1.2)
            canvas.line(cx - 5, scale.y(value - e), cx + 5, scale.y(value - e), "#222222", 1.2)
        canvas.text(cx, _HEIGHT - _MARGIN_B + 18, label, size=11)
    return canvas.render()
