"""Dependency-free SVG bar charts for rankings and attribution figures."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

__all__ = ["bar_chart_svg", "grouped_bar_chart_svg"]

_PALETTE = ("#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c", "#dc7ec0", "#797979")

_LABEL_W = 200
_BAR_AREA = 420
_BAR_H = 18
_GAP = 6
_TOP = 40


def _scale(values: np.ndarray) -> float:
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    return peak if peak > 0 else 1.0


def bar_chart_svg(labels: list[str], values, title: str = "") -> str:
    """Horizontal bar chart, one bar per label; negative values extend left."""
    values = np.asarray(values, dtype=np.float64)
    if len(labels) != values.size:
        raise ValueError("labels and values must have equal length")
    peak = _scale(values)
    has_neg = bool(np.any(values < 0))
    zero_x = _LABEL_W + (_BAR_AREA / 2 if has_neg else 0)
    unit = (_BAR_AREA / 2 if has_neg else _BAR_AREA) / peak
    height = _TOP + len(labels) * (_BAR_H + _GAP) + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_LABEL_W + _BAR_AREA + 90}" '
        f'height="{height}" font-family="sans-serif" font-size="12">',
        f'<text x="10" y="20" font-size="14" font-weight="bold">{escape(title)}</text>',
        f'<line x1="{zero_x}" y1="{_TOP - 8}" x2="{zero_x}" '
        f'y2="{height - 16}" stroke="#888"/>',
    ]
    for i, (label, v) in enumerate(zip(labels, values)):
        y = _TOP + i * (_BAR_H + _GAP)
        w = abs(v) * unit
        bx = zero_x - w if v < 0 else zero_x
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(
            f'<text x="{_LABEL_W - 8}" y="{y + _BAR_H - 5}" text-anchor="end">'
            f"{escape(str(label))}</text>"
        )
        parts.append(
            f'<rect x="{bx:.2f}" y="{y}" width="{max(w, 0.5):.2f}" '
            f'height="{_BAR_H}" fill="{color}"/>'
        )
        tx = zero_x + (w + 6 if v >= 0 else -(w + 6))
        anchor = "start" if v >= 0 else "end"
        parts.append(
            f'<text x="{tx:.2f}" y="{y + _BAR_H - 5}" text-anchor="{anchor}">{v:.4g}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def grouped_bar_chart_svg(
    group_labels: list[str], series: dict[str, list[float]], title: str = ""
) -> str:
    """Bars grouped by label, one color per series, with a legend."""
    names = list(series)
    table = np.array([np.asarray(series[n], dtype=np.float64) for n in names])
    if table.shape[1] != len(group_labels):
        raise ValueError("series lengths must match group_labels")
    peak = _scale(table)
    has_neg = bool(np.any(table < 0))
    zero_x = _LABEL_W + (_BAR_AREA / 2 if has_neg else 0)
    unit = (_BAR_AREA / 2 if has_neg else _BAR_AREA) / peak
    bar_h = 14
    group_h = len(names) * (bar_h + 2) + 10
    height = _TOP + len(group_labels) * group_h + len(names) * 18 + 30
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_LABEL_W + _BAR_AREA + 90}" '
        f'height="{height}" font-family="sans-serif" font-size="12">',
        f'<text x="10" y="20" font-size="14" font-weight="bold">{escape(title)}</text>',
        f'<line x1="{zero_x}" y1="{_TOP - 8}" x2="{zero_x}" '
        f'y2="{_TOP + len(group_labels) * group_h}" stroke="#888"/>',
    ]
    for gi, label in enumerate(group_labels):
        gy = _TOP + gi * group_h
        parts.append(
            f'<text x="{_LABEL_W - 8}" y="{gy + group_h / 2}" text-anchor="end">'
            f"{escape(str(label))}</text>"
        )
        for si, name in enumerate(names):
            v = table[si, gi]
            y = gy + si * (bar_h + 2)
            w = abs(v) * unit
            bx = zero_x - w if v < 0 else zero_x
            parts.append(
                f'<rect x="{bx:.2f}" y="{y}" width="{max(w, 0.5):.2f}" height="{bar_h}" '
                f'fill="{_PALETTE[si % len(_PALETTE)]}"/>'
            )
    legend_y = _TOP + len(group_labels) * group_h + 12
    for si, name in enumerate(names):
        y = legend_y + si * 18
        parts.append(
            f'<rect x="{_LABEL_W}" y="{y}" width="12" height="12" '
            f'fill="{_PALETTE[si % len(_PALETTE)]}"/>'
        )
        parts.append(f'<text x="{_LABEL_W + 18}" y="{y + 11}">{escape(str(name))}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
