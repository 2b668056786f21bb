import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dorttr.domain import Assessment, BorConfig, PatientRecord, ResponseCategory as RC, days_to_months, derive_bor
from dorttr.estimand import Status, SurvivalDatum, builtin_specs
from dorttr.estimators import fit_curve, km_fit
from dorttr.io import read_assessments
from dorttr.plots import STYLE, PlotOptions, follow_up_day, plot_step, plot_swimmer

NS = {"s": "http://www.w3.org/2000/svg"}
SPECS = builtin_specs()


def parse(svg: bytes):
    return ET.fromstring(svg)


def x_axis_map(root):
    """Linear months -> pixel map recovered from the x-axis tick labels."""
    g = root.find("s:g[@class='x-axis']", NS)
    pts = [(float(t.text), float(t.get("x"))) for t in g.findall("s:text", NS) if t.get("font-size") is None]
    (m0, x0), (m1, x1) = pts[0], pts[-1]
    return lambda m: x0 + (x1 - x0) * (m - m0) / (m1 - m0)


def numbers(s):
    return [float(v) for v in re.findall(r"-?\d+\.\d+", s)]


def glyph_x(el):
    if el.tag.endswith("rect"):
        return float(el.get("x")) + float(el.get("width")) / 2
    coords = numbers(el.get("points") or el.get("d"))
    xs = coords[0::2]
    if "ongoing" in el.get("class"):
        return min(xs)
    return (min(xs) + max(xs)) / 2


def bors(patients):
    return {p.id: derive_bor(p) for p in patients}


def resp(pid, seq, cutoff, **kw):
    return PatientRecord(pid, tuple(Assessment(d, RC(c)) for d, c in seq), cutoff_day=cutoff, **kw)


def test_step_plot_deterministic(golden_path):
    ps = read_assessments(golden_path).patients
    c = fit_curve(ps, SPECS["dor_traditional"])
    a = plot_step(c)
    assert a == plot_step(fit_curve(ps, SPECS["dor_traditional"]))
    root = parse(a)
    assert root.get("version") == "1.1"
    assert b"<!-- dorttr " in a


def test_flat_curve_is_single_horizontal_line():
    d = [SurvivalDatum(str(i), t, Status.CENSORED) for i, t in enumerate([30, 60, 90])]
    root = parse(plot_step(km_fit(d)))
    path = root.find("s:path[@class='curve']", NS).get("d")
    ys = numbers(path)[1::2]
    assert len(ys) == 2 and ys[0] == ys[1]
    assert len(root.findall(".//s:line[@class='censor']", NS)) == 3


def test_cif_path_non_decreasing(golden_path):
    ps = read_assessments(golden_path).patients
    root = parse(plot_step(fit_curve(ps, SPECS["ttr_cif"])))
    ys = numbers(root.find("s:path[@class='curve']", NS).get("d"))[1::2]
    # pixel y decreases as the value rises
    assert all(b <= a for a, b in zip(ys, ys[1:]))
    x0, y0 = numbers(root.find("s:path[@class='curve']", NS).get("d"))[:2]
    assert y0 == max(ys)


def test_censor_marks_at_month_positions(golden_path):
    ps = read_assessments(golden_path).patients
    c = fit_curve(ps, SPECS["dor_traditional"])
    root = parse(plot_step(c))
    to_x = x_axis_map(root)
    marks = root.findall(".//s:line[@class='censor']", NS)
    assert len(marks) == int(np.sum(c.n_censor > 0))
    for m, t in zip(marks, c.censor_times):
        assert float(m.get("data-months")) == pytest.approx(days_to_months(t), abs=1e-6)
        assert float(m.get("x1")) == pytest.approx(to_x(days_to_months(t)), abs=0.01)


def test_ci_band_optional(golden_path):
    ps = read_assessments(golden_path).patients
    c = fit_curve(ps, SPECS["dor_traditional"])
    assert b'class="ci"' in plot_step(c)
    assert b'class="ci"' not in plot_step(c, PlotOptions(show_ci=False))


def test_swimmer_ongoing_responder():
    p = resp("A", [(56, "SD"), (112, "PR"), (168, "PR")], 200)
    root = parse(plot_swimmer([p], bors([p])))
    kinds = [el.get("class") for el in root.findall(".//*[@data-months]", NS)]
    assert kinds == ["marker onset_PR", "marker ongoing"]


def test_swimmer_nonresponder_with_pd():
    p = resp("B", [(56, "SD"), (112, "PD")], 130)
    root = parse(plot_swimmer([p], bors([p])))
    kinds = [el.get("class") for el in root.findall(".//*[@data-months]", NS)]
    assert kinds == ["marker progression"]


def test_swimmer_cr_distinct_from_pr():
    ps = [resp("A", [(56, "CR"), (112, "CR")], 120), resp("B", [(56, "PR"), (112, "CR")], 120)]
    root = parse(plot_swimmer(ps, bors(ps)))
    kinds = {el.get("class") for el in root.findall(".//*[@data-months]", NS)}
    assert {"marker onset_CR", "marker onset_PR", "marker improve_CR"} <= kinds
    assert STYLE["marker"]["onset_CR"] != STYLE["marker"]["onset_PR"]


def test_swimmer_empty_cohort_has_axes():
    root = parse(plot_swimmer([], {}))
    assert root.find("s:g[@class='x-axis']", NS) is not None
    assert root.findall(".//s:g[@class='patient']", NS) == []


def test_swimmer_sorted_and_markers_on_month_scale(golden_path):
    ps = read_assessments(golden_path).patients
    res = {}
    for p in ps:
        try:
            res[p.id] = derive_bor(p, BorConfig())
        except Exception:
            res[p.id] = None
    svg = plot_swimmer(ps, res)
    assert svg == plot_swimmer(ps, res)
    root = parse(svg)
    to_x = x_axis_map(root)
    by_id = {p.id: p for p in ps}
    order = [g.get("data-patient") for g in root.findall(".//s:g[@class='patient']", NS)]
    fu = [follow_up_day(by_id[i]) for i in order]
    assert fu == sorted(fu, reverse=True) and len(order) == len(ps)

    expected_days = {}
    for p in ps:
        r = res[p.id]
        days = {"progression": p.first_pd_day, "death": p.death_day, "new_therapy": p.new_therapy_day}
        if r is not None and r.onset_day is not None:
            days["onset"] = r.onset_day
        expected_days[p.id] = days
    markers = root.findall(".//*[@data-months]", NS)
    assert markers
    for el in markers:
        m = float(el.get("data-months"))
        assert glyph_x(el) == pytest.approx(to_x(m), abs=0.02)
        kind = el.get("class").split()[1]
        key = "onset" if kind.startswith("onset") else kind
        if key in expected_days[el.get("data-patient")]:
            assert m == pytest.approx(days_to_months(expected_days[el.get("data-patient")][key]), abs=1e-6)
