"""Response endpoints (BOR/ORR, duration of response, time to response) under
explicit estimand strategies, with nonparametric survival estimators."""

__version__ = "0.1.0"

from .domain import (
    Assessment,
    BorConfig,
    BorResult,
    OrrResult,
    PatientRecord,
    ResponseCategory,
    compute_orr,
    days_to_months,
    derive_bor,
    months_to_days,
)
from .estimand import EstimandSpec, SurvivalDatum, builtin_specs, derive_cohort
from .estimators import (
    CiTransform,
    EstimandReport,
    StepCurve,
    aj_fit,
    edor,
    km_at,
    km_fit,
    km_median,
    pbir_fit,
    summarize,
)

__all__ = [
    "Assessment",
    "BorConfig",
    "BorResult",
    "CiTransform",
    "EstimandReport",
    "EstimandSpec",
    "OrrResult",
    "PatientRecord",
    "ResponseCategory",
    "StepCurve",
    "SurvivalDatum",
    "aj_fit",
    "builtin_specs",
    "compute_orr",
    "days_to_months",
    "derive_bor",
    "derive_cohort",
    "edor",
    "km_at",
    "km_fit",
    "km_median",
    "months_to_days",
    "pbir_fit",
    "summarize",
]
