"""Static SVG charts of evaluation CSVs (800x500 canvas)."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 800, 500
MARGIN = dict(left=70, right=170, top=40, bottom=60)
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def mean_slots_from_results(text: str) -> dict[str, list[float]]:
    sums: dict[str, dict[int, float]] = defaultdict(lambda: defaultdict(float))
    counts: dict[str, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    for row in csv.DictReader(io.StringIO(text)):
        m, s = row["method"], int(row["slot"])
        sums[m][s] += float(row["score"])
        counts[m][s] += 1
    return {m: [sums[m][s] / counts[m][s] for s in sorted(sums[m])] for m in sums}


def mean_abo_from_metrics(text: str) -> dict[str, float]:
    sums: dict[str, float] = defaultdict(float)
    counts: dict[str, int] = defaultdict(int)
    for row in csv.DictReader(io.StringIO(text)):
        sums[row["method"]] += float(row["abo"])
        counts[row["method"]] += 1
    return {m: sums[m] / counts[m] for m in sums}


def _frame(title: str, y_max: float, x_label: str, y_label: str) -> list[str]:
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
           f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
           f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
           f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(x_label)}</text>',
           f'<text x="18" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 18 {(y0 + y1) / 2:.1f})">{escape(y_label)}</text>']
    for t in range(6):
        v = y_max * t / 5
        y = y0 - (y0 - y1) * t / 5
        out.append(f'<line x1="{x0 - 4}" y1="{y:.1f}" x2="{x0}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{y + 4:.1f}" text-anchor="end">{v:.2f}</text>')
    return out


def slot_chart(means: dict[str, list[float]], title: str = "Mean list score by length") -> str:
    """Line chart of mean ``f(L[0:i])`` against list length ``i``."""
    k = max((len(v) for v in means.values()), default=1)
    y_max = max([1.0] + [x for v in means.values() for x in v]) * 1.05
    out = _frame(title, y_max, "list length", "mean score")
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def px(i):
        return x0 + (x1 - x0) * (i + 0.5) / k

    def py(v):
        return y0 - (y0 - y1) * v / y_max

    for i in range(k):
        out.append(f'<text x="{px(i):.1f}" y="{y0 + 18}" text-anchor="middle">{i + 1}</text>')
    for n, (method, vals) in enumerate(means.items()):
        color = PALETTE[n % len(PALETTE)]
        pts = " ".join(f"{px(i):.1f},{py(v):.1f}" for i, v in enumerate(vals))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for i, v in enumerate(vals):
            out.append(f'<circle cx="{px(i):.1f}" cy="{py(v):.1f}" r="3" fill="{color}"/>')
        ly = MARGIN["top"] + 20 * n + 10
        out.append(f'<line x1="{x1 + 15}" y1="{ly}" x2="{x1 + 35}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x1 + 40}" y="{ly + 4}">{escape(method)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def abo_chart(means: dict[str, float], title: str = "Average best overlap of candidate pools") -> str:
    out = _frame(title, 1.0, "method", "ABO")
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    n = max(len(means), 1)
    slot = (x1 - x0) / n
    for i, (method, v) in enumerate(means.items()):
        h = (y0 - y1) * min(max(v, 0.0), 1.0)
        x = x0 + slot * i + slot * 0.15
        out.append(f'<rect x="{x:.1f}" y="{y0 - h:.1f}" width="{slot * 0.7:.1f}" height="{h:.1f}" '
                   f'fill="{PALETTE[i % len(PALETTE)]}"/>')
        out.append(f'<text x="{x + slot * 0.35:.1f}" y="{y0 - h - 5:.1f}" text-anchor="middle">{v:.3f}</text>')
        out.append(f'<text x="{x + slot * 0.35:.1f}" y="{y0 + 18}" text-anchor="middle">{escape(method)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_plots(report_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Charts for ``results.csv`` (and ``metrics.csv`` when present) in ``report_dir``."""
    src = Path(report_dir)
    out = Path(out_dir) if out_dir else src
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    slots = out / "slot_scores.svg"
    slots.write_text(slot_chart(mean_slots_from_results((src / "results.csv").read_text())))
    paths.append(slots)
    metrics = src / "metrics.csv"
    if metrics.exists():
        bars = out / "abo.svg"
        bars.write_text(abo_chart(mean_abo_from_metrics(metrics.read_text())))
        paths.append(bars)
    return paths
