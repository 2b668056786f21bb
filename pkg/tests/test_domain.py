import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles
from dorttr.domain import (
    Assessment,
    BorConfig,
    PatientRecord,
    ResponseCategory as RC,
    clopper_pearson,
    compute_orr,
    days_to_months,
    derive_bor,
    eligible_assessments,
    months_to_days,
)
from dorttr.errors import EmptyPopulation, NotEvaluable, ValidationError


def patient(seq, pid="P1", cutoff=None, **kw):
    a = tuple(Assessment(d, RC(c)) for d, c in seq)
    if cutoff is None:
        cutoff = max([d for d, _ in seq] + [v for v in kw.values() if isinstance(v, int)] + [0])
    return PatientRecord(pid, a, cutoff_day=cutoff, **kw)


CONFIRM = BorConfig(require_confirmation=True)


def test_month_conversion_round_trip():
    assert days_to_months(30.4375) == 1.0
    assert months_to_days(6) == pytest.approx(182.625)
    assert days_to_months(56) == pytest.approx(1.84, abs=5e-3)


def test_category_order_and_parse():
    ranks = [c.rank for c in (RC.CR, RC.PR, RC.SD, RC.PD, RC.NE)]
    assert ranks == sorted(ranks, reverse=True)
    assert RC.parse(" pr ") is RC.PR
    with pytest.raises(ValueError):
        RC.parse("MR")


def test_record_invariants():
    with pytest.raises(ValidationError):
        patient([(56, "SD"), (56, "PR")])
    with pytest.raises(ValidationError):
        patient([(112, "SD"), (56, "PR")])
    with pytest.raises(ValidationError):
        PatientRecord("P", (Assessment(0, RC.SD),), cutoff_day=10)
    with pytest.raises(ValidationError):
        PatientRecord("P", (Assessment(50, RC.SD),), cutoff_day=40)
    with pytest.raises(ValidationError):
        patient([(56, "SD"), (112, "SD")], death_day=60, cutoff=200)


def test_pr_then_pd():
    res = derive_bor(patient([(56, "PR"), (112, "PR"), (168, "PD")]))
    assert res.bor is RC.PR and res.onset_day == 56 and res.progression_day == 168
    assert res.is_responder


def test_sd_then_pd_is_nonresponder():
    res = derive_bor(patient([(56, "SD"), (112, "PD")]))
    assert res.bor is RC.SD and res.onset_day is None and res.progression_day == 112


def test_response_after_pd_ignored():
    res = derive_bor(patient([(56, "PD"), (112, "PR")]))
    assert res.bor is RC.PD and not res.is_responder


def test_response_after_new_therapy_ignored():
    p = patient([(56, "SD"), (112, "PR")], new_therapy_day=100, cutoff=200)
    assert derive_bor(p).bor is RC.SD
    untruncated = BorConfig(truncate_at_new_therapy=False)
    assert derive_bor(p, untruncated).bor is RC.PR


def test_no_assessments_is_ne():
    res = derive_bor(PatientRecord("P", (), cutoff_day=30, death_day=20))
    assert res.bor is RC.NE and res.onset_day is None


def test_best_of_pr_then_cr_onset_at_first_response():
    res = derive_bor(patient([(56, "PR"), (112, "CR"), (168, "CR")]))
    assert res.bor is RC.CR and res.onset_day == 56


def test_confirmation_rules():
    single = patient([(56, "SD"), (112, "PR")])
    assert derive_bor(single, CONFIRM).bor is RC.SD
    confirmed = patient([(56, "PR"), (112, "PR")])
    assert derive_bor(confirmed, CONFIRM).onset_day == 56
    too_soon = patient([(56, "PR"), (70, "PR")])
    assert not derive_bor(too_soon, CONFIRM).is_responder
    # one NE may sit between the response and its confirmation
    with_ne = patient([(56, "PR"), (84, "NE"), (112, "PR")])
    assert derive_bor(with_ne, CONFIRM).is_responder
    strict = BorConfig(require_confirmation=True, allow_ne_between_confirmation=False)
    assert not derive_bor(with_ne, strict).is_responder
    # a CR is confirmed only by a later CR
    cr_then_pr = patient([(56, "CR"), (112, "PR"), (168, "PR")])
    res = derive_bor(cr_then_pr, CONFIRM)
    assert res.bor is RC.PR and res.onset_day == 112


def test_eligible_keeps_pd_marker():
    p = patient([(56, "SD"), (112, "PD"), (168, "SD")])
    assert [a.day for a in eligible_assessments(p, BorConfig())] == [56, 112]


def test_not_measurable_raises():
    p = PatientRecord("X", (Assessment(56, RC.PR),), cutoff_day=60, baseline_measurable=False)
    with pytest.raises(NotEvaluable):
        derive_bor(p)


def test_orr_excludes_not_evaluable(caplog):
    pats = [
        patient([(56, "PR")], "A"),
        patient([(56, "SD")], "B"),
        PatientRecord("C", (Assessment(56, RC.PR),), cutoff_day=60, baseline_measurable=False),
    ]
    with caplog.at_level(logging.WARNING):
        orr = compute_orr(pats)
    assert (orr.n_responders, orr.n_total, orr.excluded) == (1, 2, ("C",))
    assert "not evaluable" in caplog.text


def test_orr_empty():
    with pytest.raises(EmptyPopulation):
        compute_orr([])


@pytest.mark.parametrize("k,n", [(0, 10), (23, 30), (10, 10), (1, 2)])
def test_clopper_pearson_tail_identities(k, n):
    """Bounds solve the exact binomial tail equations."""
    lo, hi = clopper_pearson(k, n)
    if k > 0:
        assert stats.binom.sf(k - 1, n, lo) == pytest.approx(0.025, abs=1e-9)
    else:
        assert lo == 0.0
    if k < n:
        assert stats.binom.cdf(k, n, hi) == pytest.approx(0.025, abs=1e-9)
    else:
        assert hi == 1.0


def test_clopper_pearson_23_of_30():
    lo, hi = clopper_pearson(23, 30)
    assert (round(lo, 4), round(hi, 4)) == (0.5772, 0.9007)


# --------------------------------------------------------------------- properties

CATS = ["CR", "PR", "SD", "PD", "NE"]


@st.composite
def histories(draw):
    n = draw(st.integers(0, 8))
    gaps = draw(st.lists(st.integers(1, 90), min_size=n, max_size=n))
    days, d = [], 0
    for g in gaps:
        d += g
        days.append(d)
    cats = draw(st.lists(st.sampled_from(CATS), min_size=n, max_size=n))
    cutoff = (days[-1] if days else 0) + draw(st.integers(1, 60))
    nt = draw(st.one_of(st.none(), st.integers(1, cutoff)))
    return patient(list(zip(days, cats)), cutoff=cutoff, new_therapy_day=nt)


@settings(max_examples=1000, deadline=None)
@given(histories())
def test_confirmation_never_increases_response(p):
    loose = derive_bor(p, BorConfig())
    strict = derive_bor(p, CONFIRM)
    assert strict.bor.rank <= loose.bor.rank
    assert not (strict.is_responder and not loose.is_responder)
    if strict.is_responder:
        assert strict.onset_day >= loose.onset_day


@settings(max_examples=1000, deadline=None)
@given(histories(), st.integers(1, 600))
def test_earlier_new_therapy_never_increases_bor(p, cut):
    """Moving new therapy earlier truncates more history and cannot improve the BOR."""
    nt_old = p.new_therapy_day
    nt_new = cut if nt_old is None else min(cut, nt_old)
    if nt_new > p.cutoff_day:
        return
    earlier = PatientRecord(p.id, p.assessments, p.cutoff_day, new_therapy_day=nt_new)
    a, b = derive_bor(p), derive_bor(earlier)
    assert b.bor.rank <= a.bor.rank
    assert not (b.is_responder and not a.is_responder)


@settings(max_examples=1000, deadline=None)
@given(histories(), st.lists(st.sampled_from(CATS), min_size=1, max_size=3))
def test_assessments_after_pd_do_not_matter(p, tail):
    if p.first_pd_day is None or p.new_therapy_day is not None:
        return
    last = p.assessments[-1].day
    extra = tuple(Assessment(last + 28 * (i + 1), RC(c)) for i, c in enumerate(tail))
    longer = PatientRecord(p.id, p.assessments + extra, last + 28 * len(tail))
    assert derive_bor(p) == derive_bor(longer)


@settings(max_examples=1000, deadline=None)
@given(histories())
def test_matches_oracle_derivation(p):
    d = {"visits": [(a.day, a.category.value) for a in p.assessments],
         "cutoff": p.cutoff_day, "new_therapy": p.new_therapy_day}
    bor, onset = oracles.bor(d)
    res = derive_bor(p)
    assert (res.bor.value, res.onset_day) == (bor, onset)
