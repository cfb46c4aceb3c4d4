"""Report output: JSON files and a dependency-free SVG step chart.

The chart draws the four anchors as bars (train on train covariates, train
on shared, target on shared, target on target) and an arrow between each
consecutive pair labelled with the term value. When the report carries
standard errors the bars get 1.96-SE whiskers and the labels a ``±`` half
width.
"""

from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

from .decomposition import ANCHORS, TERMS, DecompositionReport

ANCHOR_LABELS = {
    "ep_rp": ("E_P[R_P]", "train"),
    "es_rp": ("E_S[R_P]", "train on shared"),
    "es_rq": ("E_S[R_Q]", "target on shared"),
    "eq_rq": ("E_Q[R_Q]", "target"),
}
TERM_LABELS = {
    "x_shift_p_to_s": "X shift (P to S)",
    "cond_shift": "Y|X shift",
    "x_shift_s_to_q": "X shift (S to Q)",
}
WHISKER_Z = 1.96
SE_PREFERENCE = ("if", "np", "half")

WIDTH, HEIGHT = 720, 440
LEFT, RIGHT, TOP, BOTTOM = 70, 30, 50, 70
BAR_WIDTH = 90
COLORS = ("#4c72b0", "#8fa8d6", "#e3a07a", "#c44e52")


def write_json(report: DecompositionReport, path, indent: int | None = 2) -> None:
    Path(path).write_text(report.to_json(indent) + "\n", encoding="utf-8")


def dump_json(data: dict, path, indent: int | None = 2) -> None:
    """Write a plain dict deterministically (sorted keys, no NaN)."""
    text = json.dumps(data, indent=indent, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _fmt(x: float) -> str:
    s = f"{x:.4f}"
    return "0.0000" if s == "-0.0000" else s


def _num(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _se_block(report: DecompositionReport):
    for m in SE_PREFERENCE:
        if m in report.se:
            return m, report.se[m]
    for m in sorted(report.se):
        return m, report.se[m]
    return None, None


def render_svg(report: DecompositionReport, title: str | None = None) -> str:
    """Deterministic SVG text for ``report``; identical reports give identical bytes."""
    method, block = _se_block(report)
    values = [float(report.anchors[k]) for k in ANCHORS]
    half = [WHISKER_Z * block[k].se if block else 0.0 for k in ANCHORS]
    lo = min([0.0] + [v - h for v, h in zip(values, half)])
    hi = max([0.0] + [v + h for v, h in zip(values, half)])
    if hi - lo <= 0:
        hi = lo + 1.0
    pad = 0.12 * (hi - lo)
    lo = lo - pad if lo < 0 else lo
    hi += pad
    plot_h = HEIGHT - TOP - BOTTOM
    plot_w = WIDTH - LEFT - RIGHT

    def y(v):
        return TOP + (hi - v) / (hi - lo) * plot_h

    slot = plot_w / len(ANCHORS)
    centers = [LEFT + slot * (i + 0.5) for i in range(len(ANCHORS))]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        '<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="7" '
        'markerHeight="7" orient="auto-start-reverse"><path d="M0,0 L10,5 L0,10 z" fill="#333"/>'
        '</marker></defs>',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    heading = title or "Loss change decomposition"
    if method:
        heading += f" (whiskers: {WHISKER_Z}·SE, {method})"
    out.append(f'<text x="{WIDTH / 2:.2f}" y="22" text-anchor="middle" font-size="15">'
               f'{escape(heading)}</text>')
    # axis with five ticks
    out.append(f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + plot_h}" stroke="#333"/>')
    for i in range(5):
        v = lo + (hi - lo) * i / 4
        out.append(f'<line x1="{LEFT - 4}" y1="{_num(y(v))}" x2="{LEFT}" y2="{_num(y(v))}" stroke="#333"/>')
        out.append(f'<text x="{LEFT - 8}" y="{_num(y(v) + 4)}" text-anchor="end">{_fmt(v)}</text>')
    out.append(f'<line x1="{LEFT}" y1="{_num(y(0.0))}" x2="{WIDTH - RIGHT}" y2="{_num(y(0.0))}" '
               'stroke="#999" stroke-dasharray="3,3"/>')

    for i, key in enumerate(ANCHORS):
        v, cx = values[i], centers[i]
        top, base = min(y(v), y(0.0)), max(y(v), y(0.0))
        symbol, caption = ANCHOR_LABELS[key]
        out.append(f'<rect class="anchor" data-key="{key}" data-value="{_fmt(v)}" '
                   f'x="{_num(cx - BAR_WIDTH / 2)}" y="{_num(top)}" width="{BAR_WIDTH}" '
                   f'height="{_num(base - top)}" fill="{COLORS[i]}"/>')
        if half[i] > 0:
            y1, y2 = y(v + half[i]), y(v - half[i])
            out.append(f'<g class="whisker" stroke="#222"><line x1="{_num(cx)}" y1="{_num(y1)}" '
                       f'x2="{_num(cx)}" y2="{_num(y2)}"/>'
                       f'<line x1="{_num(cx - 8)}" y1="{_num(y1)}" x2="{_num(cx + 8)}" y2="{_num(y1)}"/>'
                       f'<line x1="{_num(cx - 8)}" y1="{_num(y2)}" x2="{_num(cx + 8)}" y2="{_num(y2)}"/></g>')
        out.append(f'<text x="{_num(cx)}" y="{HEIGHT - BOTTOM + 18}" text-anchor="middle">'
                   f'{escape(symbol)}</text>')
        out.append(f'<text x="{_num(cx)}" y="{HEIGHT - BOTTOM + 34}" text-anchor="middle" '
                   f'fill="#555">{escape(caption)}</text>')
        out.append(f'<text x="{_num(cx)}" y="{_num(top - 6)}" text-anchor="middle">{_fmt(v)}</text>')

    for i, key in enumerate(TERMS):
        x1 = centers[i] + BAR_WIDTH / 2 + 4
        x2 = centers[i + 1] - BAR_WIDTH / 2 - 4
        y1, y2 = y(values[i]), y(values[i + 1])
        val = float(report.terms[key])
        label = f"{val:+.4f}".replace("+0.0000", "0.0000").replace("-0.0000", "0.0000")
        if block:
            label += f" ± {_fmt(WHISKER_Z * block[key].se)}"
        out.append(f'<line class="term" data-key="{key}" data-value="{_fmt(val)}" x1="{_num(x1)}" '
                   f'y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" stroke="#333" '
                   'stroke-width="1.5" marker-end="url(#arrow)"/>')
        ly = min(y1, y2) - 22
        mx = (x1 + x2) / 2
        out.append(f'<text x="{_num(mx)}" y="{_num(ly)}" text-anchor="middle" fill="#555">'
                   f'{escape(TERM_LABELS[key])}</text>')
        out.append(f'<text class="term-label" x="{_num(mx)}" y="{_num(ly + 14)}" '
                   f'text-anchor="middle">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(report: DecompositionReport, path, title: str | None = None) -> None:
    Path(path).write_text(render_svg(report, title), encoding="utf-8")
