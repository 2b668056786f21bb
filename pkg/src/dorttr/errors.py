"""Exception and warning types shared across the package."""

from __future__ import annotations


class DorttrError(Exception):
    """Base class for all package errors."""


class NotEvaluable(DorttrError):
    """Patient cannot be assessed for response (no measurable disease at baseline)."""

    def __init__(self, patient_id: str, reason: str = "baseline disease not measurable"):
        super().__init__(f"patient {patient_id!r} not evaluable: {reason}")
        self.patient_id = patient_id
        self.reason = reason


class EmptyPopulation(DorttrError):
    """An estimator or summary was asked to work on zero subjects."""


class SpecMismatch(DorttrError):
    """An estimand specification was used with the wrong derivation or estimator."""


class InvalidSpec(DorttrError):
    """An estimand specification violates its own invariants."""


class CompetingCodePresent(DorttrError):
    """Kaplan-Meier was given data with competing-event statuses."""


class InvalidConfig(DorttrError):
    """A simulation or file configuration is malformed."""


class UnsupportedConfig(DorttrError):
    """A configuration is valid but has no closed-form truth."""


class _RowErrors(DorttrError):
    def __init__(self, problems: list[tuple[int | None, str]]):
        self.problems = list(problems)
        lines = [f"line {ln}: {msg}" if ln is not None else msg for ln, msg in self.problems]
        super().__init__(f"{len(lines)} problem(s):\n  " + "\n  ".join(lines))


class ParseError(_RowErrors):
    """Input file could not be parsed (malformed value, unknown token, missing column)."""


class ValidationError(_RowErrors):
    """Input parsed, but records violate patient-level invariants."""


class TauBeyondFollowUp(UserWarning):
    """Restriction time for an area-under-curve summary exceeds observed follow-up."""


class BeyondFollowUp(UserWarning):
    """A curve was evaluated past its last observed time."""
