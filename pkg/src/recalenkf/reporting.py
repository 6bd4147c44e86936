"""CSV and SVG emitters for experiment results."""
from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

__all__ = [
    "LineSeries",
    "emit_curve_csv",
    "emit_sweep_csv",
    "emit_plot",
]

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _fmt(value: float) -> str:
    # 17 significant digits round-trip any float64 exactly
    return format(float(value), ".17g")


def _write_lines(path, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_curve_csv(result, path) -> None:
    """Write an RMSE-versus-step curve as `step,rmse` rows."""
    lines = ["step,rmse"]
    for step, value in enumerate(result.rmse, start=1):
        lines.append(f"{step},{_fmt(value)}")
    _write_lines(path, lines)


def emit_sweep_csv(rows, path) -> None:
    """Write sweep rows as `scale,filter,mode,rmse_avg,diverged_runs`."""
    lines = ["scale,filter,mode,rmse_avg,diverged_runs"]
    for row in rows:
        lines.append(
            f"{_fmt(row.scale)},{row.variant},{row.mode},{_fmt(row.rmse_avg)},{row.diverged_runs}"
        )
    _write_lines(path, lines)


@dataclass(frozen=True)
class LineSeries:
    """One labelled line of a chart."""

    label: str
    x: tuple
    y: tuple


def _decade_ticks(lo: float, hi: float):
    e0 = math.floor(math.log10(lo))
    e1 = math.ceil(math.log10(hi))
    if e1 == e0:
        e1 += 1
    return [10.0 ** e for e in range(e0, e1 + 1)]


def emit_plot(series, path, title="", x_label="", y_label="", log_x=False) -> None:
    """Write a self-contained SVG line chart with a log-scale y axis.

    One polyline per series; non-finite or nonpositive y points are dropped
    (the y axis is logarithmic).  log_x switches the x axis to decades too.
    """
    series = list(series)
    if not series:
        raise ValueError("emit_plot needs at least one series")
    cleaned = []
    for s in series:
        pts = [
            (float(x), float(y))
            for x, y in zip(s.x, s.y)
            if math.isfinite(x) and math.isfinite(y) and y > 0.0 and (not log_x or x > 0.0)
        ]
        cleaned.append((s.label, pts))
    all_pts = [p for _, pts in cleaned for p in pts]
    if not all_pts:
        raise ValueError("no plottable points (log-scale axes need positive values)")

    x_vals = [p[0] for p in all_pts]
    y_vals = [p[1] for p in all_pts]
    x_min, x_max = min(x_vals), max(x_vals)
    y_min, y_max = min(y_vals), max(y_vals)

    width, height = 760, 460
    px0, px1 = 64, width - 170
    py0, py1 = 36, height - 52
    plot_w, plot_h = px1 - px0, py1 - py0

    y_ticks = _decade_ticks(y_min, y_max)
    y_lo = math.log10(y_ticks[0])
    y_hi = math.log10(y_ticks[-1])

    if log_x:
        x_ticks = _decade_ticks(x_min, x_max)
        x_lo, x_hi = math.log10(x_ticks[0]), math.log10(x_ticks[-1])

        def map_x(x):
            return px0 + (math.log10(x) - x_lo) / (x_hi - x_lo) * plot_w
    else:
        if x_max == x_min:
            x_max = x_min + 1.0
        x_ticks = [x_min + i * (x_max - x_min) / 5.0 for i in range(6)]
        x_lo, x_hi = x_min, x_max

        def map_x(x):
            return px0 + (x - x_lo) / (x_hi - x_lo) * plot_w

    def map_y(y):
        return py1 - (math.log10(y) - y_lo) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{(px0 + px1) / 2:.1f}" y="22" text-anchor="middle" '
            f'font-size="14">{escape(title)}</text>'
        )

    for tick in y_ticks:
        y = map_y(tick)
        parts.append(
            f'<line x1="{px0}" y1="{y:.2f}" x2="{px1}" y2="{y:.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{px0 - 8}" y="{y + 4:.2f}" text-anchor="end">{tick:g}</text>'
        )
    for tick in x_ticks:
        x = map_x(tick)
        parts.append(
            f'<line x1="{x:.2f}" y1="{py1}" x2="{x:.2f}" y2="{py1 + 5}" '
            f'stroke="#333333" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{py1 + 20}" text-anchor="middle">{tick:g}</text>'
        )

    parts.append(
        f'<rect x="{px0}" y="{py0}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#333333" stroke-width="1"/>'
    )
    if x_label:
        parts.append(
            f'<text x="{(px0 + px1) / 2:.1f}" y="{height - 14}" '
            f'text-anchor="middle">{escape(x_label)}</text>'
        )
    if y_label:
        parts.append(
            f'<text x="18" y="{(py0 + py1) / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 18 {(py0 + py1) / 2:.1f})">{escape(y_label)}</text>'
        )

    for index, (label, pts) in enumerate(cleaned):
        color = _PALETTE[index % len(_PALETTE)]
        points = " ".join(f"{map_x(x):.2f},{map_y(y):.2f}" for x, y in pts)
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = py0 + 10 + 18 * index
        parts.append(
            f'<line x1="{px1 + 10}" y1="{ly:.1f}" x2="{px1 + 34}" y2="{ly:.1f}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{px1 + 40}" y="{ly + 4:.1f}">{escape(label)}</text>')

    parts.append("</svg>")
    _write_lines(path, parts)
