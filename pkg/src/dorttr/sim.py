"""Multi-state trial simulator used as an oracle and as a demo-data source.

Patients start in "not yet in response" and leave it for response,
progression or death; responders later progress or die. Latent transition
times are continuous. A state change is observed at the first scheduled
assessment on or after it, while death is recorded on the day it happens.

Random numbers come from numpy's PCG64 generator. A replicate index is
folded into the seed with :class:`numpy.random.SeedSequence`, so replicate
``k`` of seed ``s`` is the same no matter how replicates are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import Assessment, PatientRecord, ResponseCategory
from .errors import InvalidConfig, UnsupportedConfig

RNG_ALGORITHM = "PCG64"


@dataclass(frozen=True)
class AssessmentSchedule:
    """Visit days: the start of listed cycles, then every ``every_cycles`` cycles.

    Cycle ``k`` starts on day ``(k - 1) * cycle_days``. An explicit ``days``
    tuple overrides the cycle rule.
    """

    cycle_days: int = 28
    cycles: tuple[int, ...] = (3, 5, 7)
    every_cycles: int = 3
    days: Optional[tuple[int, ...]] = None

    def days_until(self, cutoff_day: int) -> np.ndarray:
        if self.days is not None:
            out = [d for d in self.days if d <= cutoff_day]
        else:
            out = [(c - 1) * self.cycle_days for c in self.cycles]
            c = self.cycles[-1] if self.cycles else 1
            while True:
                c += self.every_cycles
                day = (c - 1) * self.cycle_days
                if day > cutoff_day:
                    break
                out.append(day)
            out = [d for d in out if d <= cutoff_day]
        return np.asarray(out, dtype=np.int64)

    def validate(self) -> list[str]:
        problems = []
        if self.days is not None:
            d = list(self.days)
            if any(b <= a for a, b in zip(d, d[1:])) or (d and d[0] < 1):
                problems.append("explicit assessment days must be >= 1 and strictly increasing")
        else:
            if self.cycle_days < 1 or self.every_cycles < 1:
                problems.append("cycle_days and every_cycles must be >= 1")
            cyc = list(self.cycles)
            if any(b <= a for a, b in zip(cyc, cyc[1:])) or (cyc and cyc[0] < 2):
                problems.append("cycles must be strictly increasing and start at cycle >= 2")
        return problems


@dataclass(frozen=True)
class TrialSimConfig:
    """Generator parameters. Rates are per day."""

    n_patients: int = 30
    hazard_response: float = 0.01
    hazard_progression_pre: float = 0.002
    hazard_progression_post: float = 0.002
    hazard_death: float = 0.0005
    prob_new_therapy_at_pd: float = 0.0
    hazard_new_therapy: float = 0.0
    new_therapy_delay_days: int = 14
    response_shape: float = 1.0
    prob_not_measurable: float = 0.0
    schedule: AssessmentSchedule = field(default_factory=AssessmentSchedule)
    cutoff_day: int = 365
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.n_patients < 0:
            problems.append("n_patients must be >= 0")
        for name in (
            "hazard_response", "hazard_progression_pre", "hazard_progression_post",
            "hazard_death", "hazard_new_therapy",
        ):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                problems.append(f"{name} must be a finite rate >= 0")
        for name in ("prob_new_therapy_at_pd", "prob_not_measurable"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must lie in [0, 1]")
        if self.response_shape <= 0:
            problems.append("response_shape must be > 0")
        if self.new_therapy_delay_days < 0:
            problems.append("new_therapy_delay_days must be >= 0")
        if self.cutoff_day < 1:
            problems.append("cutoff_day must be >= 1")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be a 64-bit unsigned integer")
        problems += self.schedule.validate()
        if problems:
            raise InvalidConfig("; ".join(problems))


def make_rng(seed: int, replicate: Optional[int] = None) -> np.random.Generator:
    entropy = [seed] if replicate is None else [seed, replicate]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _waiting(rng, rate: float, size: int, shape: float = 1.0) -> np.ndarray:
    e = rng.standard_exponential(size)
    if rate <= 0:
        return np.full(size, np.inf)
    return e ** (1.0 / shape) / rate


@dataclass
class LatentTimes:
    """Continuous latent history of each subject (days; inf = never)."""

    response: np.ndarray
    progression: np.ndarray
    death: np.ndarray
    switch: np.ndarray  # new therapy without progression
    nt_at_pd: np.ndarray  # bool: new therapy follows observed progression
    not_measurable: np.ndarray


def draw_latent(cfg: TrialSimConfig, n: int, rng: np.random.Generator) -> LatentTimes:
    t_resp = _waiting(rng, cfg.hazard_response, n, cfg.response_shape)
    t_prog_pre = _waiting(rng, cfg.hazard_progression_pre, n)
    t_death = _waiting(rng, cfg.hazard_death, n)
    t_prog_post = _waiting(rng, cfg.hazard_progression_post, n)
    t_switch = _waiting(rng, cfg.hazard_new_therapy, n)
    nt_at_pd = rng.random(n) < cfg.prob_new_therapy_at_pd
    not_meas = rng.random(n) < cfg.prob_not_measurable

    responds = t_resp < np.minimum(t_prog_pre, t_death)
    response = np.where(responds, t_resp, np.inf)
    # death hazard is the same in both states, so one death clock serves both
    progression = np.where(responds, t_resp + t_prog_post, t_prog_pre)
    return LatentTimes(response, progression, t_death, t_switch, nt_at_pd, not_meas)


@dataclass
class ObservedTimes:
    """Visit-level view of :class:`LatentTimes` (days; -1 = not observed)."""

    onset: np.ndarray
    progression: np.ndarray
    death: np.ndarray


def observe(latent: LatentTimes, grid: np.ndarray, cutoff_day: int) -> ObservedTimes:
    """Discretise latent histories onto the visit grid (vectorised)."""
    grid_ext = np.append(grid, np.iinfo(np.int64).max).astype(float)

    def next_visit(t):
        return grid_ext[np.searchsorted(grid, t, side="left")]

    alive_visit = lambda g: g < latent.death
    pd_visit = next_visit(latent.progression)
    pd_seen = alive_visit(pd_visit) & (pd_visit <= cutoff_day)
    resp_visit = next_visit(latent.response)
    # a response is missed if progression is already visible at that visit
    resp_seen = (
        np.isfinite(latent.response)
        & alive_visit(resp_visit)
        & (resp_visit <= cutoff_day)
        & (latent.progression > resp_visit)
    )
    death_day = np.ceil(np.maximum(latent.death, 1e-9))
    death_seen = death_day <= cutoff_day
    return ObservedTimes(
        np.where(resp_seen, resp_visit, -1).astype(np.int64),
        np.where(pd_seen, pd_visit, -1).astype(np.int64),
        np.where(death_seen, death_day, -1).astype(np.int64),
    )


def simulate_trial(cfg: TrialSimConfig, replicate: Optional[int] = None) -> list[PatientRecord]:
    """Draw a synthetic cohort. Deterministic given ``(cfg.seed, replicate)``."""
    n = cfg.n_patients
    rng = make_rng(cfg.seed, replicate)
    latent = draw_latent(cfg, n, rng)
    grid = cfg.schedule.days_until(cfg.cutoff_day)
    obs = observe(latent, grid, cfg.cutoff_day)
    width = max(3, len(str(n)))
    out = []
    for i in range(n):
        death = int(obs.death[i]) if obs.death[i] >= 0 else None
        pd_day = int(obs.progression[i]) if obs.progression[i] >= 0 else None
        assessments = []
        for g in grid:
            g = int(g)
            if g >= latent.death[i]:
                break
            if latent.progression[i] <= g:
                assessments.append(Assessment(g, ResponseCategory.PD))
                break
            cat = ResponseCategory.PR if latent.response[i] <= g else ResponseCategory.SD
            assessments.append(Assessment(g, cat))

        new_therapy = None
        sw = latent.switch[i]
        if sw < min(latent.progression[i], latent.death[i]):
            day = max(1, math.ceil(sw))
            if day <= cfg.cutoff_day:
                new_therapy = day
        elif pd_day is not None and latent.nt_at_pd[i]:
            day = pd_day + cfg.new_therapy_delay_days
            if day <= cfg.cutoff_day and (death is None or day <= death):
                new_therapy = day
        stops = [d for d in (pd_day, death, new_therapy) if d is not None]
        out.append(
            PatientRecord(
                id=f"S{i + 1:0{width}d}",
                assessments=tuple(assessments),
                cutoff_day=cfg.cutoff_day,
                baseline_measurable=not bool(latent.not_measurable[i]),
                death_day=death,
                new_therapy_day=new_therapy,
                treatment_stop_day=min(stops) if stops else None,
            )
        )
    return out


@dataclass(frozen=True)
class TrueSummaries:
    r"""Closed-form latent-time truths for an exponential configuration.

    With exit rate :math:`a = \lambda_r + \lambda_p + \lambda_d` from the
    initial state and :math:`b = \lambda_{pp} + \lambda_d` from response,
    the response CIF is :math:`(\lambda_r/a)(1 - e^{-at})` and

    .. math:: \mathrm{PBIR}(t) = \lambda_r \frac{e^{-bt} - e^{-at}}{a - b}.
    """

    hazard_response: float
    exit_rate_initial: float
    exit_rate_response: float

    @property
    def p_response(self) -> float:
        a = self.exit_rate_initial
        return self.hazard_response / a if a > 0 else 0.0

    def response_cif(self, t):
        a = self.exit_rate_initial
        t = np.asarray(t, dtype=float)
        return self.p_response * -np.expm1(-a * t)

    @property
    def ttr_conditional_median(self) -> Optional[float]:
        """Median latent time to response among responders."""
        a = self.exit_rate_initial
        return math.log(2) / a if self.hazard_response > 0 else None

    @property
    def dor_median(self) -> Optional[float]:
        b = self.exit_rate_response
        return math.log(2) / b if b > 0 else None

    def dor_survival(self, t):
        return np.exp(-self.exit_rate_response * np.asarray(t, dtype=float))

    def pbir(self, t):
        a, b, lr = self.exit_rate_initial, self.exit_rate_response, self.hazard_response
        t = np.asarray(t, dtype=float)
        if lr == 0:
            return np.zeros_like(t)
        if math.isclose(a, b, rel_tol=1e-12, abs_tol=0.0):
            return lr * t * np.exp(-a * t)
        return lr * (np.exp(-b * t) - np.exp(-a * t)) / (a - b)

    def edor_days(self, tau: float) -> float:
        """Area under PBIR on [0, tau], in days."""
        a, b, lr = self.exit_rate_initial, self.exit_rate_response, self.hazard_response
        if lr == 0 or tau <= 0:
            return 0.0
        prim = lambda rate: tau if rate == 0 else -math.expm1(-rate * tau) / rate
        if math.isclose(a, b, rel_tol=1e-12, abs_tol=0.0):
            # integral of t e^{-at}
            return lr * (1 - math.exp(-a * tau) * (1 + a * tau)) / a**2
        return lr * (prim(b) - prim(a)) / (a - b)


def true_summaries(cfg: TrialSimConfig) -> TrueSummaries:
    """Analytic truths; only for exponential, switch-free configurations."""
    if cfg.response_shape != 1.0:
        raise UnsupportedConfig("closed forms need exponential response times (response_shape=1)")
    if cfg.hazard_new_therapy > 0:
        raise UnsupportedConfig("closed forms ignore new therapy without progression")
    a = cfg.hazard_response + cfg.hazard_progression_pre + cfg.hazard_death
    b = cfg.hazard_progression_post + cfg.hazard_death
    return TrueSummaries(cfg.hazard_response, a, b)


@dataclass(frozen=True)
class DiscretizedTruths:
    """Monte-Carlo truths for visit-level (observed) endpoints."""

    n_draws: int
    onset: np.ndarray  # observed onset day, -1 if none
    progression_or_death: np.ndarray

    def response_cif(self, t: float) -> float:
        return float(np.mean((self.onset >= 0) & (self.onset <= t)))

    def response_cif_se(self, t: float) -> float:
        p = self.response_cif(t)
        return math.sqrt(p * (1 - p) / self.n_draws)

    @property
    def p_response(self) -> float:
        return float(np.mean(self.onset >= 0))

    def cttr_survival(self, t: float) -> float:
        on = self.onset[self.onset >= 0]
        return float(np.mean(on > t)) if len(on) else float("nan")

    def cttr_survival_se(self, t: float) -> float:
        n = int(np.sum(self.onset >= 0))
        p = self.cttr_survival(t)
        return math.sqrt(p * (1 - p) / n) if n else float("nan")

    @property
    def cttr_median(self) -> Optional[float]:
        on = np.sort(self.onset[self.onset >= 0])
        if not len(on):
            return None
        # smallest t with P(onset > t) <= 0.5
        k = math.ceil(len(on) / 2) - 1
        return float(on[k])


def discretized_truths(cfg: TrialSimConfig, n_draws: int = 10**6, seed: int = 2**63 + 1) -> DiscretizedTruths:
    """Visit-level truths by brute-force Monte Carlo over latent histories."""
    rng = make_rng(seed)
    latent = draw_latent(cfg, n_draws, rng)
    grid = cfg.schedule.days_until(cfg.cutoff_day)
    obs = observe(latent, grid, cfg.cutoff_day)
    pd_or_death = np.where(
        obs.progression >= 0,
        np.where(obs.death >= 0, np.minimum(obs.progression, obs.death), obs.progression),
        obs.death,
    )
    return DiscretizedTruths(n_draws, obs.onset, pd_or_death)
