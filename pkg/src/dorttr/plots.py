"""Deterministic SVG figures: step curves (KM, CIF, PBIR) and swimmer plots.

Output is plain SVG 1.1 text built from fixed-precision numbers, so equal
inputs give byte-equal files. Colours and glyphs come from :data:`STYLE`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from html import escape
from typing import Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .domain import BorResult, PatientRecord, ResponseCategory, days_to_months
from .estimators import StepCurve

STYLE = {
    "curve": "#1f4e79",
    "ci_band": "#9dc3e6",
    "censor": "#1f4e79",
    "axis": "#333333",
    "grid": "#e0e0e0",
    "bar": {
        "CR": "#2e7d32",
        "PR": "#66bb6a",
        "SD": "#fbc02d",
        "PD": "#e53935",
        "NE": "#9e9e9e",
        None: "#bdbdbd",
    },
    "marker": {
        "onset_PR": ("triangle", "#1b5e20"),
        "onset_CR": ("star", "#0d47a1"),
        "improve_CR": ("star", "#0d47a1"),
        "progression": ("cross", "#b71c1c"),
        "death": ("square", "#000000"),
        "new_therapy": ("diamond", "#6a1b9a"),
        "ongoing": ("arrow", "#1b5e20"),
    },
    "font": "Helvetica, Arial, sans-serif",
}


def _f(v: float) -> str:
    return f"{v:.2f}"


@dataclass(frozen=True)
class PlotOptions:
    width: int = 640
    height: int = 420
    title: str = ""
    x_label: str = "Months"
    y_label: str = ""
    x_max_months: Optional[float] = None
    x_tick_months: float = 3.0
    show_ci: bool = True
    margin_left: int = 70
    margin_right: int = 30
    margin_top: int = 40
    margin_bottom: int = 55


@dataclass(frozen=True)
class Frame:
    """Maps (months, value) onto canvas pixels."""

    options: PlotOptions
    x_max: float
    y_min: float = 0.0
    y_max: float = 1.0

    @property
    def left(self):
        return self.options.margin_left

    @property
    def right(self):
        return self.options.width - self.options.margin_right

    @property
    def top(self):
        return self.options.margin_top

    @property
    def bottom(self):
        return self.options.height - self.options.margin_bottom

    def x(self, months: float) -> float:
        span = self.x_max if self.x_max > 0 else 1.0
        return self.left + (self.right - self.left) * months / span

    def y(self, value: float) -> float:
        span = self.y_max - self.y_min or 1.0
        return self.bottom - (self.bottom - self.top) * (value - self.y_min) / span


def _nice_max(months: float, step: float) -> float:
    return max(step, math.ceil(months / step) * step) if months > 0 else step


def _header(opts: PlotOptions, kind: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{opts.width}" '
        f'height="{opts.height}" viewBox="0 0 {opts.width} {opts.height}">',
        f"<!-- dorttr {__version__} {kind} -->",
        f'<rect x="0" y="0" width="{opts.width}" height="{opts.height}" fill="#ffffff"/>',
    ]


def _x_axis(fr: Frame) -> list[str]:
    o = fr.options
    out = [
        f'<g class="x-axis" stroke="{STYLE["axis"]}" font-family="{STYLE["font"]}" font-size="11">',
        f'<line x1="{_f(fr.left)}" y1="{_f(fr.bottom)}" x2="{_f(fr.right)}" y2="{_f(fr.bottom)}"/>',
    ]
    n = int(round(fr.x_max / o.x_tick_months))
    for k in range(n + 1):
        m = k * o.x_tick_months
        x = fr.x(m)
        out.append(f'<line x1="{_f(x)}" y1="{_f(fr.bottom)}" x2="{_f(x)}" y2="{_f(fr.bottom + 5)}"/>')
        out.append(f'<text x="{_f(x)}" y="{_f(fr.bottom + 18)}" text-anchor="middle" stroke="none">{m:g}</text>')
    out.append(
        f'<text x="{_f((fr.left + fr.right) / 2)}" y="{_f(o.height - 12)}" text-anchor="middle" '
        f'stroke="none" font-size="12">{escape(o.x_label)}</text>'
    )
    out.append("</g>")
    return out


def _title(o: PlotOptions) -> list[str]:
    if not o.title:
        return []
    return [
        f'<text x="{_f(o.width / 2)}" y="{_f(o.margin_top / 2 + 5)}" text-anchor="middle" '
        f'font-family="{STYLE["font"]}" font-size="14">{escape(o.title)}</text>'
    ]


def _step_points(times_m: np.ndarray, values: np.ndarray, start: float, end_m: float) -> list[tuple[float, float]]:
    pts = [(0.0, start)]
    cur = start
    for t, v in zip(times_m, values):
        if v != cur:
            pts.append((t, cur))
            pts.append((t, v))
            cur = v
    pts.append((end_m, cur))
    return pts


def plot_step(curve: StepCurve, options: PlotOptions = PlotOptions()) -> bytes:
    """Step plot of a KM, CIF or PBIR curve with censoring ticks and optional CI band."""
    o = options
    times_m = np.array([days_to_months(t) for t in curve.times])
    last_m = float(times_m[-1]) if len(times_m) else 0.0
    fr = Frame(o, o.x_max_months or _nice_max(last_m, o.x_tick_months))
    y_label = o.y_label or {"survival": "Probability", "incidence": "Cumulative incidence",
                            "pbir": "Probability of being in response"}[curve.kind]
    out = _header(o, f"step/{curve.kind}") + _title(o)

    out.append(f'<g class="y-axis" stroke="{STYLE["axis"]}" font-family="{STYLE["font"]}" font-size="11">')
    out.append(f'<line x1="{_f(fr.left)}" y1="{_f(fr.top)}" x2="{_f(fr.left)}" y2="{_f(fr.bottom)}"/>')
    for k in range(6):
        v = k / 5
        y = fr.y(v)
        out.append(f'<line x1="{_f(fr.left - 5)}" y1="{_f(y)}" x2="{_f(fr.left)}" y2="{_f(y)}"/>')
        out.append(f'<line x1="{_f(fr.left)}" y1="{_f(y)}" x2="{_f(fr.right)}" y2="{_f(y)}" stroke="{STYLE["grid"]}"/>')
        out.append(f'<text x="{_f(fr.left - 8)}" y="{_f(y + 4)}" text-anchor="end" stroke="none">{v:.1f}</text>')
    cx, cy = fr.left - 48, (fr.top + fr.bottom) / 2
    out.append(
        f'<text x="{_f(cx)}" y="{_f(cy)}" text-anchor="middle" stroke="none" font-size="12" '
        f'transform="rotate(-90 {_f(cx)} {_f(cy)})">{escape(y_label)}</text>'
    )
    out.append("</g>")
    out += _x_axis(fr)

    if o.show_ci and len(curve.times):
        up = _step_points(times_m, curve.ci_upper, curve.start, last_m)
        lo = _step_points(times_m, curve.ci_lower, curve.start, last_m)
        poly = up + lo[::-1]
        pts = " ".join(f"{_f(fr.x(m))},{_f(fr.y(v))}" for m, v in poly)
        out.append(f'<polygon class="ci" points="{pts}" fill="{STYLE["ci_band"]}" fill-opacity="0.4" stroke="none"/>')

    pts = _step_points(times_m, curve.estimates, curve.start, last_m)
    d = "M" + " L".join(f"{_f(fr.x(m))},{_f(fr.y(v))}" for m, v in pts)
    out.append(f'<path class="curve" d="{d}" fill="none" stroke="{STYLE["curve"]}" stroke-width="2"/>')

    out.append(f'<g class="censor-marks" stroke="{STYLE["censor"]}" stroke-width="1.5">')
    for t, v, c in zip(times_m, curve.estimates, curve.n_censor):
        if c > 0:
            x, y = fr.x(t), fr.y(v)
            out.append(f'<line class="censor" data-months="{t:.6f}" x1="{_f(x)}" y1="{_f(y - 5)}" '
                       f'x2="{_f(x)}" y2="{_f(y + 5)}"/>')
    out.append("</g>")
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")


def _glyph(kind: str, x: float, y: float, months: float, pid: str) -> str:
    shape, color = STYLE["marker"][kind]
    attrs = f'class="marker {kind}" data-patient="{escape(pid)}" data-months="{months:.6f}"'
    s = 5.0
    if shape == "triangle":
        pts = f"{_f(x)},{_f(y - s)} {_f(x - s)},{_f(y + s)} {_f(x + s)},{_f(y + s)}"
        return f'<polygon {attrs} points="{pts}" fill="{color}"/>'
    if shape == "star":
        pts = []
        for k in range(10):
            r = s * (1.0 if k % 2 == 0 else 0.45)
            a = -math.pi / 2 + k * math.pi / 5
            pts.append(f"{_f(x + r * math.cos(a))},{_f(y + r * math.sin(a))}")
        return f'<polygon {attrs} points="{" ".join(pts)}" fill="{color}"/>'
    if shape == "cross":
        return (f'<path {attrs} d="M{_f(x - s)},{_f(y - s)} L{_f(x + s)},{_f(y + s)} '
                f'M{_f(x - s)},{_f(y + s)} L{_f(x + s)},{_f(y - s)}" stroke="{color}" stroke-width="2"/>')
    if shape == "square":
        return f'<rect {attrs} x="{_f(x - s)}" y="{_f(y - s)}" width="{_f(2 * s)}" height="{_f(2 * s)}" fill="{color}"/>'
    if shape == "diamond":
        pts = f"{_f(x)},{_f(y - s)} {_f(x + s)},{_f(y)} {_f(x)},{_f(y + s)} {_f(x - s)},{_f(y)}"
        return f'<polygon {attrs} points="{pts}" fill="{color}"/>'
    # arrow pointing right, tail at x
    return (f'<path {attrs} d="M{_f(x)},{_f(y)} L{_f(x + 12)},{_f(y)} M{_f(x + 7)},{_f(y - 4)} '
            f'L{_f(x + 12)},{_f(y)} L{_f(x + 7)},{_f(y + 4)}" fill="none" stroke="{color}" stroke-width="2"/>')


def follow_up_day(p: PatientRecord) -> int:
    days = [a.day for a in p.assessments]
    days += [d for d in (p.death_day, p.new_therapy_day, p.treatment_stop_day) if d is not None]
    return max(days) if days else 0


def plot_swimmer(
    patients: Sequence[PatientRecord],
    bor_results: Mapping[str, Optional[BorResult]],
    options: PlotOptions = PlotOptions(title="", margin_left=90),
) -> bytes:
    """One bar per patient (longest follow-up on top), coloured by BOR.

    Markers show onset of response (PR and CR glyphs differ) and later
    improvement to CR, progression, death and new therapy. Responders with no
    progression, death or new therapy by their last visit get an arrow
    showing the response is ongoing at cutoff.
    """
    o = options
    order = sorted(patients, key=lambda p: (-follow_up_day(p), p.id))
    row_h = 16.0
    height = max(o.height, int(o.margin_top + o.margin_bottom + row_h * len(order)))
    o = PlotOptions(**{**o.__dict__, "height": height})
    longest = max((days_to_months(follow_up_day(p)) for p in order), default=0.0)
    fr = Frame(o, o.x_max_months or _nice_max(longest, o.x_tick_months))
    out = _header(o, "swimmer") + _title(o)
    out += _x_axis(fr)
    out.append(f'<line x1="{_f(fr.left)}" y1="{_f(fr.top)}" x2="{_f(fr.left)}" y2="{_f(fr.bottom)}" '
               f'stroke="{STYLE["axis"]}"/>')

    for i, p in enumerate(order):
        res = bor_results.get(p.id)
        y = fr.top + row_h * (i + 0.5)
        end_m = days_to_months(follow_up_day(p))
        bor = res.bor.value if res is not None else None
        out.append(f'<g class="patient" data-patient="{escape(p.id)}">')
        out.append(f'<text x="{_f(fr.left - 6)}" y="{_f(y + 4)}" text-anchor="end" '
                   f'font-family="{STYLE["font"]}" font-size="10">{escape(p.id)}</text>')
        out.append(f'<rect class="bar" x="{_f(fr.left)}" y="{_f(y - row_h * 0.3)}" '
                   f'width="{_f(fr.x(end_m) - fr.left)}" height="{_f(row_h * 0.6)}" '
                   f'fill="{STYLE["bar"][bor]}"/>')
        markers = []
        if res is not None and res.is_responder:
            onset_cat = next(a.category for a in p.assessments if a.day == res.onset_day)
            markers.append((f"onset_{onset_cat.value}", res.onset_day))
            if onset_cat is ResponseCategory.PR and res.bor is ResponseCategory.CR:
                stop = p.new_therapy_day if p.new_therapy_day is not None else math.inf
                cr = next((a.day for a in p.assessments if res.onset_day < a.day < stop
                           and a.category is ResponseCategory.CR), None)
                if cr is not None:
                    markers.append(("improve_CR", cr))
        if p.first_pd_day is not None:
            markers.append(("progression", p.first_pd_day))
        if p.new_therapy_day is not None:
            markers.append(("new_therapy", p.new_therapy_day))
        if p.death_day is not None:
            markers.append(("death", p.death_day))
        for kind, day in markers:
            m = days_to_months(day)
            out.append(_glyph(kind, fr.x(m), y, m, p.id))
        ongoing = (
            res is not None and res.is_responder and p.first_pd_day is None
            and p.death_day is None and p.new_therapy_day is None
        )
        if ongoing:
            out.append(_glyph("ongoing", fr.x(end_m), y, end_m, p.id))
        out.append("</g>")

    legend_y = o.height - 12
    x = fr.left
    out.append(f'<g class="legend" font-family="{STYLE["font"]}" font-size="10">')
    for cat in ("CR", "PR", "SD", "PD", "NE"):
        out.append(f'<rect x="{_f(x)}" y="{_f(legend_y - 8)}" width="10" height="8" fill="{STYLE["bar"][cat]}"/>')
        out.append(f'<text x="{_f(x + 13)}" y="{_f(legend_y)}">{cat}</text>')
        x += 36
    out.append("</g>")
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")
