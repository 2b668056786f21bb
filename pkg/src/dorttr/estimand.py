"""Estimand specifications and per-patient (time, status) derivation.

An :class:`EstimandSpec` fixes the population, the clock, and how each
intercurrent event is handled. The derivation functions turn a
:class:`~dorttr.domain.PatientRecord` into a :class:`SurvivalDatum` under
that spec; estimators in :mod:`dorttr.estimators` consume the result.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .domain import (
    BorConfig,
    BorResult,
    NotEvaluable,
    PatientRecord,
    ResponseCategory,
    derive_bor,
)
from .errors import EmptyPopulation, InvalidSpec, SpecMismatch

log = logging.getLogger(__name__)


class Endpoint(str, enum.Enum):
    DOR = "DOR"
    TTR = "TTR"


class Population(str, enum.Enum):
    RESPONDERS_ONLY = "responders_only"
    ALL_PATIENTS = "all_patients"

    @property
    def label(self) -> str:
        return "Responders" if self is Population.RESPONDERS_ONLY else "All patients"


class IceStrategy(str, enum.Enum):
    TREATMENT_POLICY = "treatment_policy"
    HYPOTHETICAL = "hypothetical"
    WHILE_ON = "while_on"
    COMPOSITE = "composite"


class ProgressionDeathStrategy(str, enum.Enum):
    COMPOSITE_EVENT = "composite_event"
    COMPETING_EVENT = "competing_event"
    MAX_FOLLOW_UP_CENSOR = "max_follow_up_censor"


class NonresponderRule(str, enum.Enum):
    EXCLUDE = "exclude"
    ZERO_DURATION = "zero_duration"


class Measure(str, enum.Enum):
    KM = "km"
    CIF = "cif"
    EDOR = "edor"


# displayable rows per measure
ROW_KINDS = {
    Measure.KM: ("median", "landmark"),
    Measure.CIF: ("cif_landmark", "one_minus_cif_landmark"),
    Measure.EDOR: ("pbir_landmark", "edor"),
}


@dataclass(frozen=True)
class SummarySpec:
    measure: Measure = Measure.KM
    rows: tuple[str, ...] = ("median", "landmark")

    def __post_init__(self):
        object.__setattr__(self, "measure", Measure(self.measure))
        object.__setattr__(self, "rows", tuple(self.rows))
        bad = [r for r in self.rows if r not in ROW_KINDS[self.measure]]
        if bad or not self.rows:
            raise InvalidSpec(
                f"rows {bad or list(self.rows)} not valid for measure {self.measure.value}; "
                f"choose from {ROW_KINDS[self.measure]}"
            )


class Status(str, enum.Enum):
    EVENT = "event"
    CENSORED = "censored"
    COMPETING = "competing"


class EventCode(str, enum.Enum):
    PROGRESSION = "progression"
    DEATH = "death"
    NEW_THERAPY = "new_therapy"


@dataclass(frozen=True)
class SurvivalDatum:
    """Derived (time, status) pair for one patient.

    ``code`` is set only for competing events. ``reason`` records why the
    clock stopped and feeds the censoring breakdown of reports.
    """

    patient_id: str
    time_days: int
    status: Status
    code: Optional[EventCode] = None
    reason: str = ""

    def __post_init__(self):
        if self.time_days < 0:
            raise ValueError(f"negative time for patient {self.patient_id!r}")
        if (self.status is Status.COMPETING) != (self.code is not None):
            raise ValueError("competing events (and only those) carry an event code")


@dataclass(frozen=True)
class EstimandSpec:
    name: str
    endpoint: Endpoint
    population: Population
    strategy_new_therapy: IceStrategy = IceStrategy.HYPOTHETICAL
    strategy_progression_death: ProgressionDeathStrategy = ProgressionDeathStrategy.COMPOSITE_EVENT
    strategy_discontinuation: IceStrategy = IceStrategy.TREATMENT_POLICY
    nonresponder_rule: NonresponderRule = NonresponderRule.EXCLUDE
    summary: SummarySpec = field(default_factory=SummarySpec)
    bor_cfg: BorConfig = field(default_factory=BorConfig)
    description: str = ""

    def __post_init__(self):
        for name, typ in (
            ("endpoint", Endpoint),
            ("population", Population),
            ("strategy_new_therapy", IceStrategy),
            ("strategy_progression_death", ProgressionDeathStrategy),
            ("strategy_discontinuation", IceStrategy),
            ("nonresponder_rule", NonresponderRule),
        ):
            try:
                object.__setattr__(self, name, typ(getattr(self, name)))
            except ValueError:
                raise InvalidSpec(f"{self.name}: bad {name} {getattr(self, name)!r}") from None
        problems = []
        if self.strategy_discontinuation is not IceStrategy.TREATMENT_POLICY:
            problems.append("treatment discontinuation supports the treatment policy strategy only")
        if (
            self.population is Population.RESPONDERS_ONLY
            and self.nonresponder_rule is not NonresponderRule.EXCLUDE
        ):
            problems.append("responders-only population requires nonresponder_rule=exclude")
        if self.endpoint is Endpoint.TTR:
            if self.nonresponder_rule is not NonresponderRule.EXCLUDE:
                problems.append("TTR estimands require nonresponder_rule=exclude")
            if (
                self.population is Population.ALL_PATIENTS
                and self.strategy_progression_death is ProgressionDeathStrategy.COMPOSITE_EVENT
            ):
                problems.append("all-patient TTR needs competing_event or max_follow_up_censor")
        else:
            if self.strategy_progression_death is not ProgressionDeathStrategy.COMPOSITE_EVENT:
                problems.append("DOR ends with progression or death (composite_event)")
        m = self.summary.measure
        if m is Measure.CIF and not (
            self.endpoint is Endpoint.TTR
            and self.strategy_progression_death is ProgressionDeathStrategy.COMPETING_EVENT
        ):
            problems.append("CIF summary requires a TTR estimand with competing_event coding")
        if m is Measure.KM and (
            self.endpoint is Endpoint.TTR
            and self.population is Population.ALL_PATIENTS
            and self.strategy_progression_death is ProgressionDeathStrategy.COMPETING_EVENT
        ):
            problems.append("competing-event data cannot be summarised by Kaplan-Meier; use cif")
        if m is Measure.EDOR and not (
            self.endpoint is Endpoint.DOR and self.population is Population.ALL_PATIENTS
        ):
            problems.append("EDOR summary requires an all-patient DOR estimand")
        if problems:
            raise InvalidSpec(f"{self.name}: " + "; ".join(problems))

    @property
    def needs_max_follow_up(self) -> bool:
        return (
            self.endpoint is Endpoint.TTR
            and self.strategy_progression_death is ProgressionDeathStrategy.MAX_FOLLOW_UP_CENSOR
        )


def last_adequate_day(
    patient: PatientRecord, start: int = 0, before: Optional[int] = None
) -> Optional[int]:
    """Day of the last non-NE assessment on/after ``start`` and strictly before ``before``."""
    best = None
    for a in patient.assessments:
        if a.day < start or a.day > patient.cutoff_day:
            continue
        if before is not None and a.day >= before:
            break
        if a.category is not ResponseCategory.NE:
            best = a.day
    return best


def _first_pd_after(patient: PatientRecord, start: int) -> Optional[int]:
    for a in patient.assessments:
        if a.day >= start and a.category is ResponseCategory.PD:
            return a.day
    return None


def _earliest(*candidates: tuple[Optional[int], str]) -> Optional[tuple[int, str]]:
    present = [(d, r) for d, r in candidates if d is not None]
    return min(present, key=lambda x: x[0]) if present else None


def cohort_max_follow_up(patients: Iterable[PatientRecord]) -> int:
    """Longest last-contact day (assessment, death, new therapy or treatment stop) in the cohort."""
    out = 0
    for p in patients:
        days = [a.day for a in p.assessments]
        days += [d for d in (p.death_day, p.new_therapy_day, p.treatment_stop_day) if d is not None]
        if days:
            out = max(out, max(days))
    return out


def _ice_stops_clock(strategy: IceStrategy, nt: Optional[int], event: Optional[int]) -> bool:
    return (
        strategy is not IceStrategy.TREATMENT_POLICY
        and nt is not None
        and (event is None or nt < event)
    )


def derive_dor(
    patient: PatientRecord, spec: EstimandSpec, bor: Optional[BorResult] = None
) -> Optional[SurvivalDatum]:
    """Duration-of-response datum, or ``None`` for an excluded non-responder.

    The clock starts at onset of response and ends at progression or death.
    A new anticancer therapy before that censors at the last adequate
    assessment preceding it (hypothetical, while-on), ends the clock
    (composite), or is ignored (treatment policy).
    """
    if spec.endpoint is not Endpoint.DOR:
        raise SpecMismatch(f"{spec.name} is a {spec.endpoint.value} estimand, not DOR")
    bor = bor or derive_bor(patient, spec.bor_cfg)
    pid = patient.id
    if not bor.is_responder:
        if spec.nonresponder_rule is NonresponderRule.ZERO_DURATION:
            return SurvivalDatum(pid, 0, Status.EVENT, reason="non_responder")
        return None

    onset = bor.onset_day
    event = _earliest(
        (_first_pd_after(patient, onset), "progression"), (patient.death_day, "death")
    )
    event_day = event[0] if event else None
    nt = patient.new_therapy_day
    strategy = spec.strategy_new_therapy

    if _ice_stops_clock(strategy, nt, event_day):
        if strategy is IceStrategy.COMPOSITE:
            return SurvivalDatum(pid, max(nt - onset, 0), Status.EVENT, reason="new_therapy")
        last = last_adequate_day(patient, start=onset, before=nt)
        t = 0 if last is None else last - onset
        return SurvivalDatum(pid, t, Status.CENSORED, reason="new_therapy")
    if event is not None:
        return SurvivalDatum(pid, event_day - onset, Status.EVENT, reason=event[1])
    last = last_adequate_day(patient, start=onset)
    t = 0 if last is None else last - onset
    return SurvivalDatum(pid, t, Status.CENSORED, reason="cutoff")


def derive_ttr(
    patient: PatientRecord,
    spec: EstimandSpec,
    max_follow_up: Optional[int] = None,
    bor: Optional[BorResult] = None,
) -> Optional[SurvivalDatum]:
    """Time-to-response datum, or ``None`` for a non-responder in a responders-only spec.

    ``max_follow_up`` is the cohort-level censoring constant used when
    progression or death precedes response under ``max_follow_up_censor``.
    """
    if spec.endpoint is not Endpoint.TTR:
        raise SpecMismatch(f"{spec.name} is a {spec.endpoint.value} estimand, not TTR")
    bor = bor or derive_bor(patient, spec.bor_cfg)
    pid = patient.id
    if bor.is_responder:
        return SurvivalDatum(pid, bor.onset_day, Status.EVENT, reason="response")
    if spec.population is Population.RESPONDERS_ONLY:
        return None

    strategy = spec.strategy_new_therapy
    nt = patient.new_therapy_day
    nt_terminal = strategy in (IceStrategy.WHILE_ON, IceStrategy.COMPOSITE)
    terminal = _earliest(
        (patient.first_pd_day, EventCode.PROGRESSION),
        (patient.death_day, EventCode.DEATH),
        (nt if nt_terminal else None, EventCode.NEW_THERAPY),
    )
    if strategy is IceStrategy.HYPOTHETICAL and _ice_stops_clock(
        strategy, nt, terminal[0] if terminal else None
    ):
        last = last_adequate_day(patient, before=nt)
        return SurvivalDatum(pid, last or 0, Status.CENSORED, reason="new_therapy")
    if terminal is not None:
        day, code = terminal
        if spec.strategy_progression_death is ProgressionDeathStrategy.MAX_FOLLOW_UP_CENSOR:
            if max_follow_up is None:
                raise ValueError(f"{spec.name} needs the cohort max follow-up time")
            return SurvivalDatum(pid, max_follow_up, Status.CENSORED, reason="max_follow_up")
        return SurvivalDatum(pid, day, Status.COMPETING, code=code, reason=code.value)
    last = last_adequate_day(patient)
    if last is None:
        return SurvivalDatum(pid, 0, Status.CENSORED, reason="no_assessment")
    return SurvivalDatum(pid, last, Status.CENSORED, reason="cutoff")


def derive_pbir_pair(
    patient: PatientRecord, spec: EstimandSpec, bor: Optional[BorResult] = None
) -> tuple[SurvivalDatum, SurvivalDatum]:
    """Data for the two curves behind the probability of being in response.

    Returns (time to progression or death, time to response or progression
    or death), both from day 0 and both subject to the spec's handling of
    new anticancer therapy.
    """
    bor = bor or derive_bor(patient, spec.bor_cfg)
    pid = patient.id
    strategy = spec.strategy_new_therapy
    nt = patient.new_therapy_day
    pd_death = _earliest((patient.first_pd_day, "progression"), (patient.death_day, "death"))
    first = _earliest((bor.onset_day, "response"), *([pd_death] if pd_death else []))

    def one(event):
        day = event[0] if event else None
        if event is not None and event[1] == "response":
            return SurvivalDatum(pid, day, Status.EVENT, reason="response")
        if _ice_stops_clock(strategy, nt, day):
            if strategy is IceStrategy.COMPOSITE:
                return SurvivalDatum(pid, nt, Status.EVENT, reason="new_therapy")
            return SurvivalDatum(
                pid, last_adequate_day(patient, before=nt) or 0, Status.CENSORED, reason="new_therapy"
            )
        if event is not None:
            return SurvivalDatum(pid, day, Status.EVENT, reason=event[1])
        last = last_adequate_day(patient)
        return SurvivalDatum(pid, last or 0, Status.CENSORED, reason="cutoff" if last else "no_assessment")

    return one(pd_death), one(first)


def evaluable(patients: Iterable[PatientRecord], cfg: BorConfig) -> list[tuple[PatientRecord, BorResult]]:
    """Pair each evaluable patient with its BOR, skipping (and logging) the rest."""
    out = []
    for p in patients:
        try:
            out.append((p, derive_bor(p, cfg)))
        except NotEvaluable as exc:
            log.warning("skipping %s", exc)
    return out


def derive_cohort(patients: Sequence[PatientRecord], spec: EstimandSpec) -> list[SurvivalDatum]:
    """Apply the spec's per-patient derivation to a cohort, ordered by patient id."""
    patients = list(patients)
    if not patients:
        raise EmptyPopulation("empty cohort")
    pairs = evaluable(patients, spec.bor_cfg)
    out = []
    if spec.endpoint is Endpoint.DOR:
        for p, bor in pairs:
            d = derive_dor(p, spec, bor=bor)
            if d is not None:
                out.append(d)
    else:
        mfu = cohort_max_follow_up(patients) if spec.needs_max_follow_up else None
        for p, bor in pairs:
            d = derive_ttr(p, spec, max_follow_up=mfu, bor=bor)
            if d is not None:
                out.append(d)
    out.sort(key=lambda d: d.patient_id)
    return out


def builtin_specs(bor_cfg: BorConfig = BorConfig()) -> dict[str, EstimandSpec]:
    """The canonical DOR and TTR estimands, in table order."""
    R, A = Population.RESPONDERS_ONLY, Population.ALL_PATIENTS
    H, TP, WO = IceStrategy.HYPOTHETICAL, IceStrategy.TREATMENT_POLICY, IceStrategy.WHILE_ON
    COMP = ProgressionDeathStrategy.COMPOSITE_EVENT
    km_landmark = SummarySpec(Measure.KM, ("landmark",))
    km_both = SummarySpec(Measure.KM, ("median", "landmark"))
    specs = [
        EstimandSpec("dor_traditional", Endpoint.DOR, R, H, COMP, summary=km_landmark,
                     bor_cfg=bor_cfg, description="cDOR"),
        EstimandSpec("dor_tp", Endpoint.DOR, R, TP, COMP, summary=km_landmark,
                     bor_cfg=bor_cfg, description="cDOR, new therapy: treatment policy"),
        EstimandSpec("dor_while_on", Endpoint.DOR, R, WO, COMP, summary=km_landmark,
                     bor_cfg=bor_cfg, description="cDOR, while not on new therapy"),
        EstimandSpec("edor", Endpoint.DOR, A, H, COMP,
                     nonresponder_rule=NonresponderRule.ZERO_DURATION,
                     summary=SummarySpec(Measure.EDOR, ("pbir_landmark", "edor")),
                     bor_cfg=bor_cfg, description="Expected DOR"),
        EstimandSpec("time_in_response", Endpoint.DOR, A, H, COMP,
                     nonresponder_rule=NonresponderRule.ZERO_DURATION, summary=km_landmark,
                     bor_cfg=bor_cfg, description="DOR (time in response)"),
        EstimandSpec("ttr_traditional", Endpoint.TTR, R, H,
                     ProgressionDeathStrategy.COMPETING_EVENT, summary=km_both,
                     bor_cfg=bor_cfg, description="cTTR"),
        EstimandSpec("ttr_tp_maxfu", Endpoint.TTR, A, H,
                     ProgressionDeathStrategy.MAX_FOLLOW_UP_CENSOR, summary=km_both,
                     bor_cfg=bor_cfg, description="TTR, treatment policy (max follow-up)"),
        EstimandSpec("ttr_cif", Endpoint.TTR, A, WO,
                     ProgressionDeathStrategy.COMPETING_EVENT,
                     summary=SummarySpec(Measure.CIF, ("one_minus_cif_landmark",)),
                     bor_cfg=bor_cfg, description="TTR, competing events"),
    ]
    return {s.name: s for s in specs}
