"""Clinical data types and best-overall-response derivation.

Time is counted in integer days since start of treatment (day 0). Assessments
are pre-categorised (CR/PR/SD/PD/NE); lesion-level measurement is out of scope.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from scipy import stats

from .errors import EmptyPopulation, NotEvaluable, ValidationError

log = logging.getLogger(__name__)

DAYS_PER_MONTH = 30.4375


def days_to_months(days: float) -> float:
    return days / DAYS_PER_MONTH


def months_to_days(months: float) -> float:
    return months * DAYS_PER_MONTH


class ResponseCategory(str, enum.Enum):
    """Response category of a single assessment, ordered by ``rank``."""

    CR = "CR"
    PR = "PR"
    SD = "SD"
    PD = "PD"
    NE = "NE"

    @property
    def rank(self) -> int:
        return _RANK[self]

    @property
    def is_response(self) -> bool:
        return self in (ResponseCategory.CR, ResponseCategory.PR)

    @classmethod
    def parse(cls, token: str) -> "ResponseCategory":
        try:
            return cls(token.strip().upper())
        except ValueError:
            raise ValueError(f"unknown response category {token!r}") from None


_RANK = {
    ResponseCategory.CR: 4,
    ResponseCategory.PR: 3,
    ResponseCategory.SD: 2,
    ResponseCategory.PD: 1,
    ResponseCategory.NE: 0,
}


@dataclass(frozen=True)
class Assessment:
    day: int
    category: ResponseCategory


@dataclass(frozen=True)
class PatientRecord:
    """One subject's assessment timeline and intercurrent-event days.

    Raises :class:`~dorttr.errors.ValidationError` on construction when the
    record is internally inconsistent.
    """

    id: str
    assessments: tuple[Assessment, ...] = ()
    cutoff_day: int = 0
    baseline_measurable: bool = True
    death_day: Optional[int] = None
    new_therapy_day: Optional[int] = None
    treatment_stop_day: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "assessments", tuple(self.assessments))
        problems = self.problems()
        if problems:
            raise ValidationError([(None, f"patient {self.id!r}: {p}") for p in problems])

    def problems(self) -> list[str]:
        out = []
        days = [a.day for a in self.assessments]
        if any(d < 1 for d in days):
            out.append("assessment days must be >= 1 (post-baseline)")
        if any(b <= a for a, b in zip(days, days[1:])):
            out.append("assessment days must be strictly increasing (no duplicates)")
        if self.cutoff_day < 0:
            out.append("cutoff_day must be >= 0")
        if days and max(days) > self.cutoff_day:
            out.append(f"assessment on day {max(days)} after cutoff day {self.cutoff_day}")
        for name in ("death_day", "new_therapy_day", "treatment_stop_day"):
            v = getattr(self, name)
            if v is None:
                continue
            if v < 0:
                out.append(f"{name} must be >= 0")
            if v > self.cutoff_day:
                out.append(f"{name}={v} after cutoff day {self.cutoff_day}")
        if self.death_day is not None and days and self.death_day < max(days):
            out.append(f"death_day={self.death_day} precedes last assessment day {max(days)}")
        return out

    @property
    def first_pd_day(self) -> Optional[int]:
        for a in self.assessments:
            if a.category is ResponseCategory.PD:
                return a.day
        return None


@dataclass(frozen=True)
class BorConfig:
    """Rules for deriving best overall response.

    The default reflects an unconfirmed-response design in which assessments
    after progression or a new anticancer therapy are ignored.
    """

    require_confirmation: bool = False
    min_confirmation_gap_days: int = 28
    allow_ne_between_confirmation: bool = True
    truncate_at_new_therapy: bool = True
    truncate_at_progression: bool = True

    def __post_init__(self):
        if self.min_confirmation_gap_days < 0:
            raise ValueError("min_confirmation_gap_days must be >= 0")


@dataclass(frozen=True)
class BorResult:
    bor: ResponseCategory
    onset_day: Optional[int] = None
    progression_day: Optional[int] = None

    @property
    def is_responder(self) -> bool:
        return self.onset_day is not None


def eligible_assessments(patient: PatientRecord, cfg: BorConfig) -> list[Assessment]:
    """Assessments that may contribute to BOR.

    Drops assessments on/after the start of new therapy (when configured) and
    after the first PD; the PD assessment itself is kept as the progression
    marker.
    """
    out = []
    for a in patient.assessments:
        if a.day > patient.cutoff_day:
            break
        if (
            cfg.truncate_at_new_therapy
            and patient.new_therapy_day is not None
            and a.day >= patient.new_therapy_day
        ):
            break
        out.append(a)
        if cfg.truncate_at_progression and a.category is ResponseCategory.PD:
            break
    return out


def _is_confirmed(seq: Sequence[Assessment], i: int, cfg: BorConfig) -> bool:
    first = seq[i]
    n_ne = 0
    for later in seq[i + 1:]:
        if later.category is ResponseCategory.NE:
            n_ne += 1
            if not cfg.allow_ne_between_confirmation or n_ne > 1:
                return False
            continue
        if later.category.rank < first.category.rank:
            return False
        if later.day - first.day >= cfg.min_confirmation_gap_days:
            return True
    return False


def derive_bor(patient: PatientRecord, cfg: BorConfig = BorConfig()) -> BorResult:
    """Best overall response, onset of response and first progression.

    Raises
    ------
    NotEvaluable
        If the patient has no measurable disease at baseline.
    """
    if not patient.baseline_measurable:
        raise NotEvaluable(patient.id)
    seq = eligible_assessments(patient, cfg)

    qualifying = []
    for i, a in enumerate(seq):
        if a.category.is_response and (not cfg.require_confirmation or _is_confirmed(seq, i, cfg)):
            qualifying.append(a)

    if qualifying:
        bor = max((a.category for a in qualifying), key=lambda c: c.rank)
        onset = qualifying[0].day
    else:
        # an unconfirmed PR/CR still shows disease control
        ranks = [ResponseCategory.SD if a.category.is_response else a.category for a in seq]
        bor = max(ranks, key=lambda c: c.rank) if ranks else ResponseCategory.NE
        onset = None

    progression = None
    for a in patient.assessments:
        if (
            cfg.truncate_at_new_therapy
            and patient.new_therapy_day is not None
            and a.day >= patient.new_therapy_day
        ):
            break
        if a.category is ResponseCategory.PD:
            progression = a.day
            break
    return BorResult(bor=bor, onset_day=onset, progression_day=progression)


@dataclass(frozen=True)
class OrrResult:
    n_responders: int
    n_total: int
    proportion: float
    ci_lower: float
    ci_upper: float
    conf_level: float = 0.95
    excluded: tuple[str, ...] = field(default=())


def clopper_pearson(k: int, n: int, conf_level: float = 0.95) -> tuple[float, float]:
    """Exact binomial confidence interval for ``k`` successes out of ``n``."""
    alpha = 1.0 - conf_level
    lower = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    upper = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lower, upper


def compute_orr(
    patients: Iterable[PatientRecord], cfg: BorConfig = BorConfig(), conf_level: float = 0.95
) -> OrrResult:
    """Overall response rate among evaluable patients, with a Clopper-Pearson CI."""
    n = k = 0
    excluded = []
    for p in patients:
        try:
            res = derive_bor(p, cfg)
        except NotEvaluable as exc:
            log.warning("%s", exc)
            excluded.append(p.id)
            continue
        n += 1
        k += res.is_responder
    if n == 0:
        raise EmptyPopulation("no evaluable patients for ORR")
    lo, hi = clopper_pearson(k, n, conf_level)
    return OrrResult(k, n, k / n, lo, hi, conf_level, tuple(excluded))
