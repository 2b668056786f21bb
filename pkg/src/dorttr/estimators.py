"""Nonparametric estimators for response endpoints.

Kaplan-Meier with Greenwood variance, Aalen-Johansen cumulative incidence,
probability of being in response (PBIR) and its restricted area (EDOR), plus
:func:`summarize`, which routes an estimand spec to the right chain.

All curves are right-continuous step functions over integer days.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from .domain import PatientRecord, days_to_months, months_to_days
from .errors import BeyondFollowUp, CompetingCodePresent, EmptyPopulation, SpecMismatch, TauBeyondFollowUp
from .estimand import (
    Endpoint,
    EstimandSpec,
    EventCode,
    Measure,
    Status,
    SurvivalDatum,
    derive_cohort,
    derive_pbir_pair,
    evaluable,
)

log = logging.getLogger(__name__)

DEFAULT_LANDMARK_DAYS = months_to_days(6)


class CiTransform(str, enum.Enum):
    LINEAR = "linear"
    LOG = "log"
    LOGLOG = "loglog"


@dataclass(frozen=True)
class StepCurve:
    """Right-continuous step function with pointwise errors.

    ``times`` holds every distinct observed time (events and censorings);
    the estimate holds on ``[times[i], times[i+1])``. Before ``times[0]`` the
    curve equals ``start``.
    """

    times: np.ndarray
    estimates: np.ndarray
    std_errs: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    n_risk: np.ndarray
    n_event: np.ndarray
    n_censor: np.ndarray
    ci_transform: CiTransform = CiTransform.LOG
    conf_level: float = 0.95
    kind: str = "survival"  # survival | incidence | pbir

    @property
    def start(self) -> float:
        return 1.0 if self.kind == "survival" else 0.0

    @property
    def max_time(self) -> float:
        return float(self.times[-1]) if len(self.times) else 0.0

    @property
    def censor_times(self) -> np.ndarray:
        return self.times[self.n_censor > 0]


@dataclass(frozen=True)
class CurvePoint:
    estimate: float
    ci_lower: float
    ci_upper: float
    std_err: float
    beyond_follow_up: bool = False


@dataclass(frozen=True)
class MedianEstimate:
    median_days: Optional[float]
    ci_lower: Optional[float]
    ci_upper: Optional[float]

    @property
    def reached(self) -> bool:
        return self.median_days is not None

    def months(self) -> tuple[Optional[float], Optional[float], Optional[float]]:
        conv = lambda d: None if d is None else days_to_months(d)
        return conv(self.median_days), conv(self.ci_lower), conv(self.ci_upper)


def _z(conf_level: float) -> float:
    return float(stats.norm.ppf(1 - (1 - conf_level) / 2))


def pointwise_ci(est, se, transform: CiTransform, conf_level: float = 0.95):
    """Pointwise CI for a probability by the delta method on the chosen scale.

    Bounds are clipped to [0, 1]; at estimates of exactly 0 or 1 the log and
    log-log scales are degenerate and the interval collapses to the point.
    """
    est = np.asarray(est, dtype=float)
    se = np.asarray(se, dtype=float)
    z = _z(conf_level)
    transform = CiTransform(transform)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if transform is CiTransform.LINEAR:
            lo, hi = est - z * se, est + z * se
        elif transform is CiTransform.LOG:
            w = np.exp(z * se / est)
            lo, hi = est / w, est * w
            degenerate = est <= 0
        else:
            logp = np.log(est)
            w = z * se / (est * np.abs(logp))
            u = np.log(-logp)
            lo, hi = np.exp(-np.exp(u + w)), np.exp(-np.exp(u - w))
            degenerate = (est <= 0) | (est >= 1)
    if transform is not CiTransform.LINEAR:
        lo = np.where(degenerate, est, lo)
        hi = np.where(degenerate, est, hi)
    return np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)


def _event_table(data: Sequence[SurvivalDatum]):
    if not data:
        raise EmptyPopulation("no observations")
    t = np.array([d.time_days for d in data], dtype=float)
    status = np.array([d.status.value for d in data])
    times = np.unique(t)
    idx = np.searchsorted(times, t)
    n_at_or_after = len(t) - np.searchsorted(np.sort(t), times, side="left")
    return t, status, times, idx, n_at_or_after


def km_fit(
    data: Sequence[SurvivalDatum],
    transform: Union[CiTransform, str] = CiTransform.LOG,
    conf_level: float = 0.95,
) -> StepCurve:
    """Product-limit estimate with Greenwood standard errors.

    Events precede censorings at tied times. Raises
    :class:`~dorttr.errors.CompetingCodePresent` for competing-event data.
    """
    if any(d.status is Status.COMPETING for d in data):
        raise CompetingCodePresent("competing-event statuses present; use aj_fit")
    t, status, times, idx, n_risk = _event_table(data)
    m = len(times)
    d = np.bincount(idx, weights=(status == Status.EVENT.value), minlength=m)
    c = np.bincount(idx, weights=(status == Status.CENSORED.value), minlength=m)
    surv = np.cumprod(1.0 - d / n_risk)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(n_risk > d, d / (n_risk * (n_risk - d)), 0.0)
    se = surv * np.sqrt(np.cumsum(terms))
    lo, hi = pointwise_ci(surv, se, transform, conf_level)
    return StepCurve(
        times, surv, se, lo, hi, n_risk.astype(int), d.astype(int), c.astype(int),
        CiTransform(transform), conf_level, "survival",
    )


def _index_at(curve: StepCurve, t: float) -> int:
    return int(np.searchsorted(curve.times, t, side="right")) - 1


def km_at(curve: StepCurve, t_days: float) -> CurvePoint:
    """Evaluate a step curve at ``t_days`` (right-continuous)."""
    if t_days < 0:
        raise ValueError("t must be >= 0")
    i = _index_at(curve, t_days)
    beyond = t_days > curve.max_time
    if beyond:
        warnings.warn(
            f"evaluating curve at day {t_days:g} beyond last observed day {curve.max_time:g}",
            BeyondFollowUp,
            stacklevel=2,
        )
    if i < 0:
        v = curve.start
        return CurvePoint(v, v, v, 0.0, beyond)
    return CurvePoint(
        float(curve.estimates[i]), float(curve.ci_lower[i]), float(curve.ci_upper[i]),
        float(curve.std_errs[i]), beyond,
    )


_EPS = 1e-12


def _first_at_or_below(times: np.ndarray, values: np.ndarray, level: float) -> Optional[float]:
    hit = np.nonzero(values <= level + _EPS)[0]
    return float(times[hit[0]]) if len(hit) else None


def km_median(curve: StepCurve) -> MedianEstimate:
    """Median survival time with a Brookmeyer-Crowley interval.

    The interval inverts the pointwise band: its lower end is the first time
    the lower band drops to 0.5, its upper end the first time the upper band
    does (absent if it never does).
    """
    if curve.kind != "survival":
        raise SpecMismatch("median is defined for survival curves only")
    return MedianEstimate(
        _first_at_or_below(curve.times, curve.estimates, 0.5),
        _first_at_or_below(curve.times, curve.ci_lower, 0.5),
        _first_at_or_below(curve.times, curve.ci_upper, 0.5),
    )


def aj_fit(
    data: Sequence[SurvivalDatum],
    target: Union[Status, EventCode] = Status.EVENT,
    transform: Union[CiTransform, str] = CiTransform.LOGLOG,
    conf_level: float = 0.95,
) -> StepCurve:
    r"""Aalen-Johansen cumulative incidence of one event type.

    ``target`` is either :attr:`Status.EVENT` (the endpoint event, e.g.
    response) or an :class:`EventCode` naming one competing cause. Every
    other non-censored status competes.

    The variance is the delta-method estimator

    .. math::

        \sum_{t_j \le t} \Big[(F(t) - F(t_j))^2 \frac{d_j}{n_j(n_j - d_j)}
        + S(t_{j-1})^2 \frac{d_{kj}(n_j - d_{kj})}{n_j^3}
        - 2 (F(t) - F(t_j)) S(t_{j-1}) \frac{d_{kj}}{n_j^2}\Big]

    which reduces to Greenwood's formula for :math:`1 - S` without competitors.
    """
    t, status, times, idx, n_risk = _event_table(data)
    m = len(times)
    if isinstance(target, EventCode):
        is_target = np.array([d.code is target for d in data])
    else:
        is_target = status == Status.EVENT.value
    is_event = status != Status.CENSORED.value
    dk = np.bincount(idx, weights=is_target & is_event, minlength=m)
    d = np.bincount(idx, weights=is_event, minlength=m)
    c = np.bincount(idx, weights=~is_event, minlength=m)

    surv = np.cumprod(1.0 - d / n_risk)
    s_prev = np.concatenate([[1.0], surv[:-1]])
    cif = np.cumsum(s_prev * dk / n_risk)

    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(n_risk > d, d / (n_risk * (n_risk - d)), 0.0)
    b = s_prev**2 * dk * (n_risk - dk) / n_risk**3
    g = s_prev * dk / n_risk**2
    # expand the (F(t) - F(t_j)) terms into running sums
    A = np.cumsum(a)
    B = np.cumsum(a * cif)
    C = np.cumsum(a * cif**2)
    D = np.cumsum(b)
    E = np.cumsum(g)
    G = np.cumsum(g * cif)
    var = cif**2 * A - 2 * cif * B + C + D - 2 * cif * E + 2 * G
    se = np.sqrt(np.clip(var, 0.0, None))
    lo, hi = pointwise_ci(cif, se, transform, conf_level)
    return StepCurve(
        times, cif, se, lo, hi, n_risk.astype(int), dk.astype(int), c.astype(int),
        CiTransform(transform), conf_level, "incidence",
    )


def _values_on(curve: StepCurve, grid: np.ndarray, attr: str) -> np.ndarray:
    idx = np.searchsorted(curve.times, grid, side="right") - 1
    vals = getattr(curve, attr)
    return np.where(idx >= 0, vals[np.clip(idx, 0, None)], curve.start if attr == "estimates" else 0.0)


def pbir_from_curves(
    s_pd_death: StepCurve, s_first_event: StepCurve, conf_level: float = 0.95
) -> StepCurve:
    """Difference of two survival curves as a PBIR step curve.

    Standard errors add (a bound that ignores the positive correlation of the
    two estimates); CIs are linear and clipped. Negative differences, possible
    when the curves cross under censoring, are clipped to 0.
    """
    grid = np.union1d(s_pd_death.times, s_first_event.times)
    diff = _values_on(s_pd_death, grid, "estimates") - _values_on(s_first_event, grid, "estimates")
    if np.any(diff < -_EPS):
        log.info("PBIR curves cross at %d time(s); clipping to 0", int(np.sum(diff < -_EPS)))
    est = np.clip(diff, 0.0, 1.0)
    se = _values_on(s_pd_death, grid, "std_errs") + _values_on(s_first_event, grid, "std_errs")
    lo, hi = pointwise_ci(est, se, CiTransform.LINEAR, conf_level)
    n_risk = _values_on(s_first_event, grid, "n_risk").astype(int)
    zeros = np.zeros(len(grid), dtype=int)
    return StepCurve(grid, est, se, lo, hi, n_risk, zeros, zeros, CiTransform.LINEAR, conf_level, "pbir")


def pbir_fit(
    patients: Sequence[PatientRecord], spec: EstimandSpec, conf_level: float = 0.95
) -> StepCurve:
    """Probability of being in response over time.

    PBIR(t) = S_D(t) - S_RD(t): KM of time to progression or death minus KM
    of time to the first of response, progression or death, both from day 0.
    """
    if spec.endpoint is not Endpoint.DOR or spec.summary.measure is not Measure.EDOR:
        raise SpecMismatch(f"{spec.name} is not an expected-DOR estimand")
    pairs = evaluable(patients, spec.bor_cfg)
    if not pairs:
        raise EmptyPopulation("no evaluable patients for PBIR")
    data = [derive_pbir_pair(p, spec, bor=b) for p, b in pairs]
    s_d = km_fit([a for a, _ in data], CiTransform.LINEAR, conf_level)
    s_rd = km_fit([b for _, b in data], CiTransform.LINEAR, conf_level)
    return pbir_from_curves(s_d, s_rd, conf_level)


def step_integral(curve: StepCurve, tau_days: float) -> float:
    """Exact integral of a step curve over [0, tau] (in days)."""
    knots = curve.times[(curve.times > 0) & (curve.times < tau_days)]
    edges = np.concatenate([[0.0], knots, [tau_days]])
    # value on each [edges[k], edges[k+1])
    vals = _values_on(curve, edges[:-1], "estimates")
    return float(np.sum(vals * np.diff(edges)))


def edor(curve: StepCurve, tau_days: float) -> float:
    """Expected duration of response in months: area under PBIR up to ``tau_days``."""
    if tau_days < 0:
        raise ValueError("tau must be >= 0")
    if tau_days > curve.max_time:
        warnings.warn(
            f"tau {tau_days:g} d exceeds last observed time {curve.max_time:g} d",
            TauBeyondFollowUp,
            stacklevel=2,
        )
    return days_to_months(step_integral(curve, tau_days))


@dataclass
class ReportRow:
    kind: str
    description: str
    population: str
    estimate: Optional[float]
    ci_lower: Optional[float] = None
    ci_upper: Optional[float] = None
    unit: str = "probability"


@dataclass
class EstimandReport:
    spec_name: str
    endpoint: str
    population: str
    measure: str
    n: int
    n_events: int
    censoring: dict = field(default_factory=dict)
    competing: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    median_months: Optional[list] = None  # [estimate, lower, upper] for KM summaries
    landmark_days: Optional[float] = None
    tau_days: Optional[float] = None
    ci_transform: str = CiTransform.LOG.value
    conf_level: float = 0.95


def fit_curve(
    patients: Sequence[PatientRecord],
    spec: EstimandSpec,
    transform: Union[CiTransform, str] = CiTransform.LOG,
    cif_transform: Union[CiTransform, str] = CiTransform.LOGLOG,
    conf_level: float = 0.95,
) -> StepCurve:
    """The curve that summarises ``spec``: KM, CIF or PBIR."""
    measure = spec.summary.measure
    if measure is Measure.EDOR:
        return pbir_fit(patients, spec, conf_level)
    data = derive_cohort(patients, spec)
    if not data:
        raise EmptyPopulation(f"{spec.name}: no patients in the analysis population")
    if measure is Measure.CIF:
        return aj_fit(data, Status.EVENT, cif_transform, conf_level)
    return km_fit(data, transform, conf_level)


def _fmt_months(m: float) -> str:
    return f"{m:.4g}"


def summarize(
    patients: Sequence[PatientRecord],
    spec: EstimandSpec,
    landmark_days: float = DEFAULT_LANDMARK_DAYS,
    tau_days: Optional[float] = None,
    transform: Union[CiTransform, str] = CiTransform.LOG,
    cif_transform: Union[CiTransform, str] = CiTransform.LOGLOG,
    conf_level: float = 0.95,
) -> EstimandReport:
    """Estimate the population-level summary of ``spec`` on a cohort.

    ``tau_days`` (EDOR only) defaults to the last observed time of the PBIR
    curve.
    """
    data = derive_cohort(patients, spec)
    if not data:
        raise EmptyPopulation(f"{spec.name}: no patients in the analysis population")
    curve = fit_curve(patients, spec, transform, cif_transform, conf_level)
    pop = spec.population.label
    desc = spec.description or spec.name
    lm = _fmt_months(days_to_months(landmark_days))
    pct = f"{conf_level:.0%}"

    censoring: dict = {}
    competing: dict = {}
    for d in data:
        if d.status is Status.CENSORED:
            censoring[d.reason] = censoring.get(d.reason, 0) + 1
        elif d.status is Status.COMPETING:
            competing[d.code.value] = competing.get(d.code.value, 0) + 1

    report = EstimandReport(
        spec_name=spec.name,
        endpoint=spec.endpoint.value,
        population=pop,
        measure=spec.summary.measure.value,
        n=len(data),
        n_events=sum(d.status is Status.EVENT for d in data),
        censoring=dict(sorted(censoring.items())),
        competing=dict(sorted(competing.items())),
        landmark_days=float(landmark_days),
        ci_transform=curve.ci_transform.value,
        conf_level=conf_level,
    )
    if spec.summary.measure is Measure.KM:
        report.median_months = list(km_median(curve).months())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BeyondFollowUp)
        point = km_at(curve, landmark_days)
    for kind in spec.summary.rows:
        if kind == "median":
            est, lo, hi = report.median_months
            row = ReportRow(kind, f"{desc}: KM median [months] ({pct} CI)", pop, est, lo, hi, "months")
        elif kind == "landmark":
            row = ReportRow(kind, f"{desc}: KM {lm}-month estimate ({pct} CI)", pop,
                            point.estimate, point.ci_lower, point.ci_upper)
        elif kind == "cif_landmark":
            row = ReportRow(kind, f"{desc}: CIF {lm}-month estimate ({pct} CI)", pop,
                            point.estimate, point.ci_lower, point.ci_upper)
        elif kind == "one_minus_cif_landmark":
            row = ReportRow(kind, f"{desc}: 1-CIF {lm}-month estimate ({pct} CI)", pop,
                            1 - point.estimate, 1 - point.ci_upper, 1 - point.ci_lower)
        elif kind == "pbir_landmark":
            row = ReportRow(kind, f"Probability of being in response at Month {lm}", pop,
                            point.estimate, point.ci_lower, point.ci_upper)
        elif kind == "edor":
            tau = curve.max_time if tau_days is None else tau_days
            report.tau_days = float(tau)
            row = ReportRow(
                kind,
                f"Mean expected duration of response [months], truncated {_fmt_months(days_to_months(tau))} months",
                pop, edor(curve, tau), unit="months",
            )
        else:  # pragma: no cover - SummarySpec validates kinds
            raise SpecMismatch(kind)
        report.rows.append(row)
    return report
