# plotting.py
"""F1-vs-samples curves as a standalone SVG document, built by hand."""

import logging
from typing import Dict, List, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

from evaluation import BENCHMARK

logger = logging.getLogger(__name__)

# strategy colors; anything unlisted falls back to grey
PALETTE = {
    'random': '#1f77b4',
    'uncertainty': '#d62728',
    'coreset': '#2ca02c',
    BENCHMARK: '#444444',
}


def _fmt(value: float) -> str:
    """Fixed two-decimal coordinates keep the output stable across platforms."""
    return f"{value:.2f}"


class SVGCanvas:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.parts: List[str] = []

    def line(self, x1, y1, x2, y2, stroke='#000000', width=1.0, dash: str = None):
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ''
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{stroke}" stroke-width="{_fmt(width)}"{dash_attr}/>'
        )

    def polyline(self, points: Sequence[Tuple[float, float]], stroke: str, width=2.0):
        coords = ' '.join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        self.parts.append(f'<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="{_fmt(width)}"/>')

    def circle(self, x, y, r, fill):
        self.parts.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(r)}" fill="{fill}"/>')

    def text(self, x, y, string, size=12, anchor='start', extra=''):
        extra_attr = f' {extra}' if extra else ''
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-family="sans-serif" font-size="{size}" '
            f'text-anchor="{anchor}"{extra_attr}>{escape(str(string))}</text>'
        )

    def render(self) -> str:
        header = (
            '<?xml version="1.0" encoding="UTF-8" standalone="no"?>\n'
            f'<svg version="1.1" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}" xmlns="http://www.w3.org/2000/svg">\n'
            f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="#ffffff"/>\n'
        )
        return header + '\n'.join(self.parts) + '\n</svg>\n'


def _nice_ticks(low: float, high: float, count: int = 5) -> List[float]:
    if high <= low:
        high = low + 1.0
    raw_step = (high - low) / count
    magnitude = 10 ** np.floor(np.log10(raw_step))
    step = min((m * magnitude for m in (1, 2, 2.5, 5, 10) if m * magnitude >= raw_step), default=raw_step)
    start = np.ceil(low / step) * step
    return [float(v) for v in np.arange(start, high + step * 1e-9, step)]


def f1_curves_svg(curves: pd.DataFrame, benchmark_f1: float = None, title: str = 'F1 vs. cumulative samples',
                  width: int = 720, height: int = 440) -> str:
    """
    One polyline per strategy from a mean_curves frame, plus a dashed horizontal
    line at the benchmark's best mean F1 when given.
    """
    margin_left, margin_right, margin_top, margin_bottom = 70, 150, 40, 55
    plot_w = width - margin_left - margin_right
    plot_h = height - margin_top - margin_bottom

    active = curves[curves['strategy'] != BENCHMARK]
    x_max = float(active['cumulative_samples'].max()) if not active.empty else 1.0
    x_ticks = _nice_ticks(0.0, x_max)
    x_hi = max(x_ticks[-1], x_max)
    y_ticks = [round(0.2 * i, 1) for i in range(6)]

    def sx(x: float) -> float:
        return margin_left + plot_w * x / x_hi

    def sy(y: float) -> float:
        return margin_top + plot_h * (1.0 - y)

    svg = SVGCanvas(width, height)
    svg.text(width / 2, margin_top / 2 + 5, title, size=15, anchor='middle')

    # grid and axes
    for y in y_ticks:
        svg.line(margin_left, sy(y), margin_left + plot_w, sy(y), stroke='#e0e0e0')
        svg.text(margin_left - 8, sy(y) + 4, f"{y:.1f}", size=11, anchor='end')
    for x in x_ticks:
        svg.line(sx(x), margin_top + plot_h, sx(x), margin_top + plot_h + 5)
        svg.text(sx(x), margin_top + plot_h + 20, f"{x:g}", size=11, anchor='middle')
    svg.line(margin_left, margin_top, margin_left, margin_top + plot_h)
    svg.line(margin_left, margin_top + plot_h, margin_left + plot_w, margin_top + plot_h)
    svg.text(margin_left + plot_w / 2, height - 12, 'cumulative samples', size=12, anchor='middle')
    svg.text(18, margin_top + plot_h / 2, 'F1 (test)', size=12, anchor='middle',
             extra=f'transform="rotate(-90 18 {_fmt(margin_top + plot_h / 2)})"')

    legend: Dict[str, str] = {}
    for strategy, group in active.groupby('strategy', sort=True):
        color = PALETTE.get(strategy, '#7f7f7f')
        group = group.sort_values('cumulative_samples')
        points = [(sx(x), sy(y)) for x, y in zip(group['cumulative_samples'], group['f1'])]
        svg.polyline(points, stroke=color)
        for x, y in points:
            svg.circle(x, y, 2.5, fill=color)
        legend[strategy] = color

    if benchmark_f1 is not None:
        svg.line(margin_left, sy(benchmark_f1), margin_left + plot_w, sy(benchmark_f1),
                 stroke=PALETTE[BENCHMARK], width=1.5, dash='6,4')
        legend[f"{BENCHMARK} (F1={benchmark_f1:.3f})"] = PALETTE[BENCHMARK]

    lx = margin_left + plot_w + 15
    for i, (name, color) in enumerate(legend.items()):
        ly = margin_top + 10 + 20 * i
        svg.line(lx, ly, lx + 20, ly, stroke=color, width=2.0)
        svg.text(lx + 26, ly + 4, name, size=11)
    return svg.render()
