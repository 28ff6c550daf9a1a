"""Minimal native SVG emitters for campaign results (no plotting deps).

Heatmaps tag each grid cell with class="cell" so consumers can count
exactly units x lanes of them; both emitters produce standalone
well-formed XML documents.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_FONT = 'font-family="monospace"'


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>']
                     + body + ["</svg>"]) + "\n"


def _heat_color(drop: float, vmax: float) -> str:
    t = 0.0 if vmax <= 0 else min(1.0, abs(drop) / vmax)
    ch = int(round(255 - 205 * t))
    # positive drops shade red, negative (fault helped) shade blue
    return f"#ff{ch:02x}{ch:02x}" if drop >= 0 else f"#{ch:02x}{ch:02x}ff"


def heatmap_svg(grid: np.ndarray, title: str) -> str:
    """One units x lanes grid of accuracy drops, cells colored and labeled."""
    grid = np.asarray(grid, dtype=np.float64)
    units, lanes = grid.shape
    cell, left, top = 56, 72, 48
    width = left + lanes * cell + 16
    height = top + units * cell + 16
    vmax = float(np.abs(grid).max())
    body = [f'<text x="{left}" y="24" {_FONT} font-size="14">{escape(title)}</text>']
    for lane in range(lanes):
        x = left + lane * cell + cell // 2
        body.append(f'<text x="{x}" y="{top - 8}" {_FONT} font-size="11" '
                    f'text-anchor="middle">lane {lane}</text>')
    for unit in range(units):
        y = top + unit * cell + cell // 2
        body.append(f'<text x="{left - 8}" y="{y + 4}" {_FONT} font-size="11" '
                    f'text-anchor="end">unit {unit}</text>')
        for lane in range(lanes):
            drop = float(grid[unit, lane])
            x, yy = left + lane * cell, top + unit * cell
            body.append(f'<rect class="cell" x="{x}" y="{yy}" width="{cell}" height="{cell}" '
                        f'fill="{_heat_color(drop, vmax)}" stroke="#444"/>')
            body.append(f'<text x="{x + cell // 2}" y="{yy + cell // 2 + 4}" {_FONT} '
                        f'font-size="11" text-anchor="middle">{drop:.3f}</text>')
    return _svg(width, height, body)


def boxplot_svg(groups: dict[tuple[int, int], dict[str, float]], title: str) -> str:
    """Five-number boxes per (k, value) group, ordered by k then value."""
    keys = sorted(groups)
    slot, left, top, plot_h = 64, 64, 48, 260
    width = left + max(1, len(keys)) * slot + 24
    height = top + plot_h + 64
    lo = min(0.0, min(groups[k]["min"] for k in keys)) if keys else 0.0
    hi = max((groups[k]["max"] for k in keys), default=1.0)
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo

    def ypix(v: float) -> float:
        return top + plot_h * (1.0 - (v - lo) / span)

    body = [f'<text x="{left}" y="24" {_FONT} font-size="14">{escape(title)}</text>']
    for tick in (lo, (lo + hi) / 2, hi):
        y = ypix(tick)
        body.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{width - 16}" y2="{y:.1f}" '
                    f'stroke="#ddd"/>')
        body.append(f'<text x="{left - 8}" y="{y + 4:.1f}" {_FONT} font-size="10" '
                    f'text-anchor="end">{tick:.3f}</text>')
    for i, key in enumerate(keys):
        g = groups[key]
        cx = left + i * slot + slot // 2
        half = slot // 4
        body.append(f'<line class="whisker" x1="{cx}" y1="{ypix(g["min"]):.1f}" '
                    f'x2="{cx}" y2="{ypix(g["max"]):.1f}" stroke="#333"/>')
        box_y = ypix(g["q3"])
        box_h = max(1.0, ypix(g["q1"]) - box_y)
        body.append(f'<rect class="box" x="{cx - half}" y="{box_y:.1f}" width="{2 * half}" '
                    f'height="{box_h:.1f}" fill="#9ecae1" stroke="#333"/>')
        body.append(f'<line class="median" x1="{cx - half}" y1="{ypix(g["median"]):.1f}" '
                    f'x2="{cx + half}" y2="{ypix(g["median"]):.1f}" stroke="#000"/>')
        body.append(f'<text x="{cx}" y="{top + plot_h + 20}" {_FONT} font-size="10" '
                    f'text-anchor="middle">k={key[0]}</text>')
        body.append(f'<text x="{cx}" y="{top + plot_h + 34}" {_FONT} font-size="10" '
                    f'text-anchor="middle">v={key[1]}</text>')
    body.append(f'<text x="16" y="{top + plot_h // 2}" {_FONT} font-size="11" '
                f'transform="rotate(-90 16 {top + plot_h // 2})" '
                f'text-anchor="middle">accuracy drop</text>')
    return _svg(width, height, body)
