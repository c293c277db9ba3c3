"""Self-contained SVG line charts for result CSVs.

The output is a pure function of the input rows: no timestamps, no random
ids, fixed number formatting.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

from .errors import SchemaError

__all__ = ["Series", "chart_from_csv", "render_svg"]

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
_W, _H = 720, 460
_LEFT, _RIGHT, _TOP, _BOTTOM = 80, 200, 40, 60

_MSE = ("experiment", "lambda", "N", "M", "estimator", "mean_mse", "ci95", "rel_err_pct", "n_trials", "seed", "wall_ms")
_THEOREM2 = ("experiment", "N", "M", "alpha0", "mean_abs_eps", "ci95", "mean_rel_err", "n_trials", "seed")
_OVERLAP_MIN = ("gamma", "overlap", "stderr", "n_trials")


@dataclass(frozen=True)
class Series:
    label: str
    xs: tuple[float, ...]
    ys: tuple[float, ...]
    dashed: bool = False
    markers: bool = True


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        return [10.0**k for k in range(a, b + 1)]
    if hi == lo:
        return [lo]
    raw = (hi - lo) / 5
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out, t = [], start
    while t <= hi + 1e-12 * abs(step):
        out.append(round(t, 12))
        t += step
    return out


def render_svg(series: list[Series], title: str, xlabel: str, ylabel: str,
               logx: bool = False, logy: bool = False) -> str:
    pts = [(x, y) for s in series for x, y in zip(s.xs, s.ys) if math.isfinite(x) and math.isfinite(y)]
    if logx:
        pts = [(x, y) for x, y in pts if x > 0]
    if logy:
        pts = [(x, y) for x, y in pts if y > 0]
    if not pts:
        raise SchemaError("nothing to plot")
    xlo, xhi = min(p[0] for p in pts), max(p[0] for p in pts)
    ylo, yhi = min(p[1] for p in pts), max(p[1] for p in pts)
    if not logy:
        pad = 0.05 * (yhi - ylo or abs(yhi) or 1.0)
        ylo, yhi = ylo - pad, yhi + pad
    if xhi == xlo:
        xlo, xhi = (xlo / 2, xlo * 2) if logx else (xlo - 1, xhi + 1)
    if yhi == ylo:
        ylo, yhi = (ylo / 2, ylo * 2) if logy else (ylo - 1, yhi + 1)
    if logx:
        xlo, xhi = 10 ** math.floor(math.log10(xlo)), 10 ** math.ceil(math.log10(xhi))
    if logy:
        ylo, yhi = 10 ** math.floor(math.log10(ylo)), 10 ** math.ceil(math.log10(yhi))

    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    ty = (lambda v: math.log10(v)) if logy else (lambda v: v)

    def px(v):
        return _LEFT + (tx(v) - tx(xlo)) / (tx(xhi) - tx(xlo)) * pw

    def py(v):
        return _TOP + ph - (ty(v) - ty(ylo)) / (ty(yhi) - ty(ylo)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<rect x="{_LEFT}" y="{_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(xlo, xhi, logx):
        if xlo <= t <= xhi:
            x = px(t)
            out.append(f'<line x1="{x:.2f}" y1="{_TOP + ph}" x2="{x:.2f}" y2="{_TOP + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{x:.2f}" y="{_TOP + ph + 18}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(ylo, yhi, logy):
        if ylo <= t <= yhi:
            y = py(t)
            out.append(f'<line x1="{_LEFT - 5}" y1="{y:.2f}" x2="{_LEFT}" y2="{y:.2f}" stroke="black"/>')
            out.append(f'<line x1="{_LEFT}" y1="{y:.2f}" x2="{_LEFT + pw}" y2="{y:.2f}" stroke="#e5e5e5"/>')
            out.append(f'<text x="{_LEFT - 8}" y="{y + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{_LEFT + pw / 2:.1f}" y="{_H - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{_TOP + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 18 {_TOP + ph / 2:.1f})">{escape(ylabel)}</text>')

    for i, s in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        keep = [(x, y) for x, y in zip(s.xs, s.ys)
                if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in keep)
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        out.append(f'<g class="series" data-label="{escape(s.label)}">')
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>')
        if s.markers:
            for x, y in keep:
                out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.5" fill="{color}"/>')
        out.append("</g>")
        ly = _TOP + 14 + 18 * i
        lx = _LEFT + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 30}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _rows(text: str) -> tuple[list[str], list[dict]]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise SchemaError("input has no header")
    rows = list(reader)
    if not rows:
        raise SchemaError("input has a header but no data rows")
    return list(reader.fieldnames), rows


def _floats(rows, key):
    try:
        return [float(r[key]) for r in rows]
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"column {key!r} is not numeric") from exc


def chart_from_csv(text: str, logx: bool | None = None, logy: bool | None = None) -> str:
    """Render a result CSV (MSE, trace-relation or overlap schema) as SVG."""
    header, rows = _rows(text)
    if tuple(header) == _MSE:
        groups: dict[str, list[dict]] = {}
        multi = len({(r["N"], r["M"]) for r in rows}) > 1
        for r in rows:
            key = r["estimator"] + (f" N={r['N']} M={r['M']}" if multi else "")
            groups.setdefault(key, []).append(r)
        series = []
        for key, grp in groups.items():
            grp = sorted(grp, key=lambda r: float(r["lambda"]))
            series.append(Series(key, tuple(_floats(grp, "lambda")), tuple(_floats(grp, "mean_mse"))))
        return render_svg(series, f"MSE vs SNR ({rows[0]['experiment']})", "lambda", "MSE",
                          bool(logx), bool(logy))
    if tuple(header) == _THEOREM2:
        groups = {}
        for r in rows:
            groups.setdefault(r["alpha0"], []).append(r)
        series = []
        all_n = sorted({float(r["N"]) for r in rows})
        for a, grp in groups.items():
            grp = sorted(grp, key=lambda r: float(r["N"]))
            series.append(Series(f"alpha0 = {float(a):g}", tuple(_floats(grp, "N")), tuple(_floats(grp, "mean_abs_eps"))))
        series.append(Series("0.4 N^-1/2", tuple(all_n), tuple(0.4 / math.sqrt(n) for n in all_n),
                             dashed=True, markers=False))
        return render_svg(series, "Trace-relation error term", "N", "mean |eps_N|",
                          True if logx is None else logx, True if logy is None else logy)
    if tuple(header[:4]) == _OVERLAP_MIN:
        rows = sorted(rows, key=lambda r: float(r["gamma"]))
        g = tuple(_floats(rows, "gamma"))
        series = [Series("Monte-Carlo", g, tuple(_floats(rows, "overlap")))]
        if "theory" in header:
            series.append(Series("theory", g, tuple(_floats(rows, "theory")), markers=False))
        return render_svg(series, "Rescaled overlap", "gamma", "overlap", bool(logx), bool(logy))
    raise SchemaError(f"unrecognized columns: {','.join(header)}")
