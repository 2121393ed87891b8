"""Minimal self-contained SVG line plots for metrics CSVs."""

from __future__ import annotations

import math
import os
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * abs(hi):
        out.append(v)
        v += step
    return out


def line_plot(series: dict, title="", xlabel="", ylabel="", width=640, height=400, bands=None) -> str:
    """``series`` maps label -> (xs, ys); ``bands`` optionally maps label -> (lower, upper)."""
    pad_l, pad_r, pad_t, pad_b = 70, 150, 40, 50
    pts = [(x, y) for xs, ys in series.values() for x, y in zip(xs, ys) if math.isfinite(y)]
    if bands:
        for label, (lo, hi) in bands.items():
            xs = series[label][0]
            pts += [(x, y) for x, y in zip(xs, lo) if math.isfinite(y)]
            pts += [(x, y) for x, y in zip(xs, hi) if math.isfinite(y)]
    if not pts:
        pts = [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def sx(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return pad_t + ph - (y - y0) / (y1 - y0) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
             f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        parts.append(f'<line x1="{sx(t):.1f}" y1="{pad_t + ph}" x2="{sx(t):.1f}" y2="{pad_t + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{sx(t):.1f}" y="{pad_t + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        parts.append(f'<line x1="{pad_l - 5}" y1="{sy(t):.1f}" x2="{pad_l}" y2="{sy(t):.1f}" stroke="black"/>')
        parts.append(f'<text x="{pad_l - 8}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:g}</text>')
    parts.append(f'<text x="{pad_l + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    parts.append(f'<text x="15" y="{pad_t + ph / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 15 {pad_t + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        if bands and label in bands:
            lo, hi = bands[label]
            poly = [(sx(x), sy(y)) for x, y in zip(xs, hi)] + [(sx(x), sy(y)) for x, y in reversed(list(zip(xs, lo)))]
            if all(math.isfinite(v) for p in poly for v in p):
                parts.append('<polygon points="' + " ".join(f"{a:.1f},{b:.1f}" for a, b in poly)
                             + f'" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys) if math.isfinite(y))
        if path:
            parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = pad_t + 15 + 16 * i
        parts.append(f'<line x1="{pad_l + pw + 10}" y1="{ly - 4}" x2="{pad_l + pw + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{pad_l + pw + 35}" y="{ly}">{escape(str(label))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_metrics(rows, out_dir, prefix=""):
    """Return, rate and multiplier curves from metrics rows (one SVG each)."""
    if not rows:
        return []
    os.makedirs(out_dir, exist_ok=True)
    steps = [r["step"] for r in rows]
    groups = {
        "return": [c for c in rows[0] if c in ("return_mean", "success_rate")],
        "rates": [c for c in rows[0] if c.startswith("rate_")],
        "multipliers": [c for c in rows[0] if c.startswith("lambda_")],
    }
    written = []
    for name, cols in groups.items():
        if not cols:
            continue
        series = {c: (steps, [float(r.get(c, float("nan"))) for r in rows]) for c in cols}
        path = os.path.join(out_dir, f"{prefix}{name}.svg")
        with open(path, "w") as fh:
            fh.write(line_plot(series, title=name, xlabel="environment steps"))
        written.append(path)
    return written
