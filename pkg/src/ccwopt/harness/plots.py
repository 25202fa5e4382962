"""Minimal deterministic SVG line charts for the study CSVs.

Input is any three-column CSV ``N,<series>,<value>``; one polyline per series
on log-log axes. Output depends only on the CSV bytes.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

from ..errors import DataError

W, H, PAD = 640, 420, 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
TITLES = {"sample-efficiency": "sup-gap vs N", "speed": "wall time (s) vs N"}


def read_series(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError(f"{path}: no data rows")
    header = rows[0]
    if len(header) != 3:
        raise DataError(f"{path}: expected three columns, got {header}")
    series = {}
    for r in rows[1:]:
        if not r:
            continue
        try:
            x, y = float(r[0]), float(r[2])
        except (ValueError, IndexError):
            raise DataError(f"{path}: bad row {r}") from None
        if x <= 0 or y <= 0:
            raise DataError(f"{path}: log axes need positive values, got {r}")
        series.setdefault(r[1], []).append((x, y))
    if not series:
        raise DataError(f"{path}: no data rows")
    return header, series


def _span(vals):
    lo, hi = math.log10(min(vals)), math.log10(max(vals))
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def render_svg(header, series, title="") -> str:
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    (x0, x1), (y0, y1) = _span(xs), _span(ys)

    def sx(x):
        return PAD + (math.log10(x) - x0) / (x1 - x0) * (W - 2 * PAD)

    def sy(y):
        return H - PAD - (math.log10(y) - y0) / (y1 - y0) * (H - 2 * PAD)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<text x="{W / 2:.1f}" y="{H - 15}" text-anchor="middle" font-size="13">{header[0]} (log)</text>',
        f'<text x="15" y="{H / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 15 {H / 2:.1f})">{header[2]} (log)</text>',
    ]
    if title:
        out.append(f'<text x="{W / 2:.1f}" y="25" text-anchor="middle" font-size="15">{title}</text>')
    for i, name in enumerate(series):
        pts = sorted(series[name])
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = PAD + 18 * i
        out.append(f'<text x="{W - PAD - 90}" y="{ly}" font-size="12" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plots(csv_path, kind: str, out_path=None) -> str:
    """Render ``csv_path`` as an SVG; writes ``out_path`` (default: .svg beside the CSV)."""
    if kind not in TITLES:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {sorted(TITLES)}")
    header, series = read_series(csv_path)
    svg = render_svg(header, series, TITLES[kind])
    out_path = Path(out_path) if out_path else Path(csv_path).with_suffix(".svg")
    out_path.write_text(svg, encoding="utf-8")
    return svg
