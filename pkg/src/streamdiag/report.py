"""Deterministic SVG plots from the analysis CSVs.

The SVG is written by hand: fixed canvas, fixed palette, coordinates rounded
to two decimals, so an unchanged CSV always gives a byte-identical plot.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence
from xml.sax.saxutils import escape

log = logging.getLogger(__name__)

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 150, 40, 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
TICKS = 5


def _num(s: str) -> float | None:
    if s is None or s == "":
        return None
    try:
        v = float(s)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    return f"{v:.3g}"


@dataclass
class Series:
    name: str
    points: list[tuple[float, float]]


@dataclass
class Bars:
    name: str
    values: list[float]


@dataclass
class Chart:
    title: str
    xlabel: str
    ylabel: str
    lines: list[Series] = field(default_factory=list)
    # categorical bar chart; every Bars entry has one value per category and
    # entries are stacked in order
    categories: list[str] = field(default_factory=list)
    stacks: list[Bars] = field(default_factory=list)


def _range(values: Sequence[float], floor_zero: bool) -> tuple[float, float]:
    if not values:
        return 0.0, 1.0
    lo, hi = min(values), max(values)
    if floor_zero:
        lo = min(lo, 0.0)
    if hi <= lo:
        hi = lo + 1.0
    return lo, hi


def render_svg(chart: Chart) -> str:
    """Render a chart to an SVG document string."""
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.2f}" y="20" text-anchor="middle" font-size="14">{escape(chart.title)}</text>',
    ]
    if chart.categories:
        totals = [sum(b.values[i] for b in chart.stacks) for i in range(len(chart.categories))]
        x0, x1 = 0.0, float(len(chart.categories))
        y0, y1 = _range(totals, True)
    else:
        xs = [x for s in chart.lines for x, _ in s.points]
        ys = [y for s in chart.lines for _, y in s.points]
        x0, x1 = _range(xs, False)
        y0, y1 = _range(ys, True)

    def sx(x: float) -> float:
        return MARGIN_L + (x - x0) / (x1 - x0) * pw

    def sy(y: float) -> float:
        return MARGIN_T + ph - (y - y0) / (y1 - y0) * ph

    # axes
    out.append(f'<g class="axes" stroke="black" fill="none">'
               f'<line x1="{MARGIN_L}" y1="{MARGIN_T + ph}" x2="{MARGIN_L + pw}" y2="{MARGIN_T + ph}"/>'
               f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{MARGIN_T + ph}"/></g>')
    for i in range(TICKS + 1):
        v = y0 + (y1 - y0) * i / TICKS
        y = sy(v)
        out.append(f'<line x1="{MARGIN_L - 4}" y1="{_fmt(y)}" x2="{MARGIN_L}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text x="{MARGIN_L - 6}" y="{_fmt(y + 4)}" text-anchor="end">{_tick_label(v)}</text>')
    if not chart.categories:
        for i in range(TICKS + 1):
            v = x0 + (x1 - x0) * i / TICKS
            x = sx(v)
            out.append(f'<line x1="{_fmt(x)}" y1="{MARGIN_T + ph}" x2="{_fmt(x)}" y2="{MARGIN_T + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{_fmt(x)}" y="{MARGIN_T + ph + 16}" text-anchor="middle">{_tick_label(v)}</text>')
    out.append(f'<text x="{MARGIN_L + pw / 2:.2f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(chart.xlabel)}</text>')
    out.append(f'<text x="15" y="{MARGIN_T + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 15 {MARGIN_T + ph / 2:.2f})">{escape(chart.ylabel)}</text>')

    legend = []
    if chart.categories:
        slot = pw / len(chart.categories)
        width = slot * 0.7
        base = [0.0] * len(chart.categories)
        for k, bars in enumerate(chart.stacks):
            color = PALETTE[k % len(PALETTE)]
            legend.append((bars.name, color))
            for i, v in enumerate(bars.values):
                top, bottom = sy(base[i] + v), sy(base[i])
                x = MARGIN_L + slot * i + (slot - width) / 2
                out.append(f'<rect x="{_fmt(x)}" y="{_fmt(top)}" width="{_fmt(width)}" '
                           f'height="{_fmt(bottom - top)}" fill="{color}"/>')
                base[i] += v
        for i, name in enumerate(chart.categories):
            x = MARGIN_L + slot * (i + 0.5)
            out.append(f'<text x="{_fmt(x)}" y="{MARGIN_T + ph + 16}" text-anchor="middle">{escape(name)}</text>')
    else:
        for k, s in enumerate(chart.lines):
            color = PALETTE[k % len(PALETTE)]
            legend.append((s.name, color))
            if not s.points:
                continue
            pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in s.points)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
    for k, (name, color) in enumerate(legend):
        y = MARGIN_T + 10 + 18 * k
        x = WIDTH - MARGIN_R + 15
        out.append(f'<rect x="{x}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{x + 15}" y="{y + 1}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------- CSV -> chart


def read_rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _xy(rows, x: str, y: str, where: Callable[[dict], bool] = lambda r: True) -> list[tuple[float, float]]:
    pts = []
    for r in rows:
        if not where(r):
            continue
        a, b = _num(r.get(x)), _num(r.get(y))
        if a is not None and b is not None:
            pts.append((a, b))
    return pts


def _cdf(rows, value: str, where: Callable[[dict], bool] = lambda r: True) -> list[tuple[float, float]]:
    # quantile tables: x is the value, y the cumulative fraction
    return [(v, q) for q, v in _xy(rows, "quantile", value, where)]


def chart_cdn_breakdown(rows) -> Chart:
    parts = (("median_wait_ms", "wait"), ("median_open_ms", "open"),
             ("median_read_ms", "read"), ("median_be_ms", "backend"))
    return Chart("CDN latency breakdown (medians)", "cache status", "ms",
                 categories=[r["cache_status"] for r in rows],
                 stacks=[Bars(name, [_num(r[col]) or 0.0 for r in rows]) for col, name in parts])


def chart_d_read(rows) -> Chart:
    return Chart("Cache hit read time", "D_READ (ms)", "CDF",
                 lines=[Series("hits", _cdf(rows, "hit_d_read_ms"))])


def chart_prefixes(rows) -> Chart:
    top = sorted(rows, key=lambda r: (-(_num(r["recurrence"]) or 0.0), r["prefix"]))[:10]
    return Chart("Prefixes in the baseline-latency tail", "prefix", "recurrence",
                 categories=[r["prefix"].split("/")[0] for r in top],
                 stacks=[Bars("recurrence", [_num(r["recurrence"]) or 0.0 for r in top])])


def chart_org_cv(rows) -> Chart:
    top = rows[:10]
    return Chart("Sessions with SRTT CV > 1", "organisation", "fraction of sessions",
                 categories=[r["org"][:14] for r in top],
                 stacks=[Bars("fraction", [_num(r["fraction"]) or 0.0 for r in top])])


def chart_popularity(rows) -> Chart:
    pts = [(math.log2(x), y) for x, y in _xy(rows, "rank_lo", "miss_rate") if x > 0]
    return Chart("Cache misses by video popularity", "log2(popularity rank)", "miss rate",
                 lines=[Series("miss rate", pts)])


def chart_rebuf(rows) -> Chart:
    return Chart("Rebuffering by loss position", "chunk id", "probability",
                 lines=[Series("P(rebuf)", _xy(rows, "chunk_id", "p_rebuf")),
                        Series("P(rebuf | loss)", _xy(rows, "chunk_id", "p_rebuf_given_loss"))])


def chart_retx(rows) -> Chart:
    return Chart("Retransmission rate by chunk", "chunk id", "mean retx rate",
                 lines=[Series("retx rate", _xy(rows, "chunk_id", "mean_retx_rate"))])


def chart_shares(rows) -> Chart:
    groups = sorted({r["group"] for r in rows})
    return Chart("Latency share of download time", "latency share", "CDF",
                 lines=[Series(g, _cdf(rows, "latency_share", lambda r, g=g: r["group"] == g))
                        for g in groups])


def chart_first_chunk(rows) -> Chart:
    return Chart("First chunk vs other chunks", "D_FB (ms)", "CDF",
                 lines=[Series("first chunk", _cdf(rows, "first_d_fb_ms")),
                        Series("other chunks", _cdf(rows, "other_d_fb_ms"))])


def chart_rendering(rows) -> Chart:
    return Chart("Rendering hypothesis", "partition", "chunks",
                 categories=[r["partition"] for r in rows],
                 stacks=[Bars("chunks", [_num(r["chunks"]) or 0.0 for r in rows])])


def chart_drop_by_rate(rows) -> Chart:
    return Chart("Dropped frames by download rate", "download rate (media s / wall s)",
                 "mean drop fraction",
                 lines=[Series("drop fraction", _xy(rows, "rate_lo", "mean_drop_fraction"))])


# output SVG -> (input CSV, builder)
PLOTS: dict[str, tuple[str, Callable[[list], Chart]]] = {
    "cdn_breakdown.svg": ("cdn_breakdown.csv", chart_cdn_breakdown),
    "d_read.svg": ("d_read.csv", chart_d_read),
    "prefix_persistence.svg": ("prefix_persistence.csv", chart_prefixes),
    "org_cv.svg": ("org_cv.csv", chart_org_cv),
    "popularity.svg": ("popularity.csv", chart_popularity),
    "rebuf_by_chunk.svg": ("rebuf_by_chunk.csv", chart_rebuf),
    "retx_by_chunk.svg": ("rebuf_by_chunk.csv", chart_retx),
    "shares.svg": ("shares.csv", chart_shares),
    "first_chunk.svg": ("first_chunk.csv", chart_first_chunk),
    "rendering.svg": ("rendering.csv", chart_rendering),
    "drop_by_rate.svg": ("drop_by_rate.csv", chart_drop_by_rate),
}


def write_report(reports_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Write one SVG per analysis CSV found in ``reports_dir``.

    Missing CSVs are skipped with a warning.  Returns the SVGs written, so an
    empty list means nothing was found.
    """
    src = Path(reports_dir)
    dst = Path(out_dir) if out_dir is not None else src
    dst.mkdir(parents=True, exist_ok=True)
    written = []
    for svg, (name, build) in PLOTS.items():
        path = src / name
        if not path.exists():
            log.warning("skipping %s: %s not found", svg, path)
            continue
        (dst / svg).write_text(render_svg(build(read_rows(path))), encoding="utf-8")
        written.append(dst / svg)
    return written
