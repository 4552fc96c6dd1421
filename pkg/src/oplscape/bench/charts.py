"""Minimal deterministic SVG charts (line and bar) with a fixed 800x500 viewport."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from ..errors import ConfigError

__all__ = ["emit_chart", "render_chart", "WIDTH", "HEIGHT"]

WIDTH, HEIGHT = 800, 500
_MARGIN = (60, 20, 40, 60)  # left, top, right, bottom
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:.4g}"


def _span(lo, hi):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ConfigError("chart data must be finite")
    if hi - lo <= 0:
        pad = 0.5 if lo == 0 else 0.05 * abs(lo)
        return lo - pad, hi + pad
    return lo, hi


def render_chart(series: dict, kind: str = "line", title: str = "",
                 xlabel: str = "", ylabel: str = "") -> str:
    """SVG text for ``series``.

    Line charts take ``{name: [(x, y), ...]}`` and draw one polyline per
    series. Bar charts take ``{name: value}`` (or single-point sequences) and
    draw one ``rect`` per bar.
    """
    if kind not in ("line", "bar"):
        raise ConfigError("chart kind must be 'line' or 'bar'")
    if not series:
        raise ConfigError("refusing to draw a chart with no series")
    left, top, right, bottom = _MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<text x="{WIDTH / 2:.0f}" y="14" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]

    if kind == "line":
        pts = {}
        for name, seq in series.items():
            seq = [(float(x), float(y)) for x, y in seq]
            if not seq:
                raise ConfigError(f"series {name!r} is empty")
            pts[name] = seq
        xs = [x for s in pts.values() for x, _ in s]
        ys = [y for s in pts.values() for _, y in s]
        x0, x1 = _span(min(xs), max(xs))
        y0, y1 = _span(min(ys), max(ys))
    else:
        vals = {}
        for name, v in series.items():
            if isinstance(v, (list, tuple)):
                if len(v) == 0:
                    raise ConfigError(f"series {name!r} is empty")
                v = v[-1][1] if isinstance(v[-1], (list, tuple)) else v[-1]
            vals[name] = float(v)
        x0, x1 = 0.0, float(len(vals))
        y0, y1 = _span(min(0.0, *vals.values()), max(0.0, *vals.values()))

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    # axes and end labels
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<text x="{left - 4}" y="{top + ph}" text-anchor="end" font-size="10">{_label(y0)}</text>')
    out.append(f'<text x="{left - 4}" y="{top + 10}" text-anchor="end" font-size="10">{_label(y1)}</text>')
    out.append(f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.0f}" font-size="12" '
               f'transform="rotate(-90 14 {top + ph / 2:.0f})" text-anchor="middle">{escape(ylabel)}</text>')

    if kind == "line":
        out.append(f'<text x="{left}" y="{top + ph + 14}" font-size="10">{_label(x0)}</text>')
        out.append(f'<text x="{left + pw}" y="{top + ph + 14}" text-anchor="end" font-size="10">'
                   f'{_label(x1)}</text>')
        for i, (name, seq) in enumerate(pts.items()):
            color = _PALETTE[i % len(_PALETTE)]
            coords = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in seq)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
            out.append(f'<text x="{left + pw - 4}" y="{top + 14 * (i + 1)}" text-anchor="end" '
                       f'font-size="11" fill="{color}">{escape(str(name))}</text>')
    else:
        slot = pw / len(vals)
        base = py(0.0)
        for i, (name, v) in enumerate(vals.items()):
            color = _PALETTE[i % len(_PALETTE)]
            x = left + i * slot + 0.15 * slot
            yv = py(v)
            y, h = min(yv, base), abs(base - yv)
            out.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(0.7 * slot)}" '
                       f'height="{_fmt(h)}" fill="{color}"/>')
            out.append(f'<text x="{_fmt(x + 0.35 * slot)}" y="{top + ph + 14}" text-anchor="middle" '
                       f'font-size="10">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_chart(series: dict, kind: str, path, title: str = "", xlabel: str = "",
               ylabel: str = "") -> Path:
    """Write ``render_chart(...)`` to ``path``; identical inputs give identical bytes."""
    text = render_chart(series, kind, title, xlabel, ylabel)
    path = Path(path)
    path.write_bytes(text.encode("utf-8"))
    return path
