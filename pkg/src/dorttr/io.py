"""Dataset ingestion/validation, canonical dataset writer, reports and config files.

Canonical dataset format: UTF-8, comma-delimited, header row, one row per
assessment with patient-level columns repeated::

    # study_id: MCL-001
    patient_id,day,category,baseline_measurable,death_day,new_therapy_day,treatment_stop_day,cutoff_day
    P01,56,PR,true,,,,420

A patient with no post-baseline assessment has one row with empty ``day``
and ``category``. Leading ``# key: value`` lines carry dataset metadata.
Patient-level columns may instead come from a separate file keyed by
``patient_id``. Day columns may be replaced by ``<name>_date`` columns plus a
``start_date`` column (ISO dates), converted on ingest.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import datetime as dt
import io as _io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

import yaml

from .domain import Assessment, BorConfig, PatientRecord, ResponseCategory, days_to_months
from .errors import InvalidConfig, ParseError, ValidationError
from .estimand import EstimandSpec, SummarySpec
from .estimators import EstimandReport, ReportRow
from .sim import AssessmentSchedule, TrialSimConfig

PathLike = Union[str, os.PathLike]

ASSESSMENT_COLUMNS = ("patient_id", "day", "category")
PATIENT_COLUMNS = (
    "baseline_measurable",
    "death_day",
    "new_therapy_day",
    "treatment_stop_day",
    "cutoff_day",
)
CANONICAL_COLUMNS = ASSESSMENT_COLUMNS + PATIENT_COLUMNS
_OPTIONAL_DAYS = ("death_day", "new_therapy_day", "treatment_stop_day")
_TRUE = {"true", "t", "yes", "y", "1"}
_FALSE = {"false", "f", "no", "n", "0"}


@dataclass(frozen=True)
class Dataset:
    patients: tuple[PatientRecord, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "patients", tuple(self.patients))
        seen, dup = set(), []
        for p in self.patients:
            if p.id in seen:
                dup.append((None, f"duplicate patient id {p.id!r}"))
            seen.add(p.id)
        if dup:
            raise ValidationError(dup)


def _read_rows(text: str, column_map: Optional[Mapping[str, str]]):
    """Split metadata comments from CSV rows; yield (line_no, row dict)."""
    lines = text.splitlines()
    metadata = {}
    start = 0
    while start < len(lines) and (lines[start].startswith("#") or not lines[start].strip()):
        body = lines[start].lstrip("#").strip()
        if ":" in body:
            k, v = body.split(":", 1)
            metadata[k.strip()] = v.strip()
        start += 1
    if start >= len(lines):
        raise ParseError([(None, "file is empty or has no header row")])
    reader = csv.reader(lines[start:])
    header = [h.strip() for h in next(reader)]
    rename = {src: dst for dst, src in (column_map or {}).items()}
    header = [rename.get(h, h) for h in header]
    rows = []
    for offset, values in enumerate(reader, start=start + 2):
        if not values or all(not v.strip() for v in values):
            continue
        if len(values) != len(header):
            rows.append((offset, None, f"expected {len(header)} fields, got {len(values)}"))
            continue
        rows.append((offset, dict(zip(header, (v.strip() for v in values))), None))
    return metadata, header, rows


def _parse_int(value: str, name: str) -> Optional[int]:
    if value == "" or value.upper() in ("NA", "NAN", "NONE", "NULL"):
        return None
    try:
        return int(value)
    except ValueError:
        try:
            f = float(value)
        except ValueError:
            raise ValueError(f"{name}: not an integer: {value!r}") from None
        if not f.is_integer():
            raise ValueError(f"{name}: not a whole number of days: {value!r}") from None
        return int(f)


def _parse_bool(value: str, name: str) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(f"{name}: not a boolean: {value!r}")


def _day_value(row: Mapping[str, str], name: str) -> Optional[int]:
    if name in row:
        return _parse_int(row[name], name)
    date_col = name[:-4] + "_date" if name.endswith("_day") else name + "_date"
    if name == "day":
        date_col = "date"
    if date_col in row and row[date_col]:
        if not row.get("start_date"):
            raise ValueError(f"{date_col} given without start_date anchor")
        start = dt.date.fromisoformat(row["start_date"])
        return (dt.date.fromisoformat(row[date_col]) - start).days
    return None


def read_assessments(
    path: PathLike,
    patients_path: Optional[PathLike] = None,
    column_map: Optional[Mapping[str, str]] = None,
) -> Dataset:
    """Read and validate a dataset.

    Parameters
    ----------
    path
        Assessment file (canonical merged format, or just
        ``patient_id, day, category`` when ``patients_path`` is given).
    patients_path
        Optional patient-level file, one row per patient.
    column_map
        Maps canonical column names to the names used in the files.

    Raises
    ------
    ParseError
        Malformed values, unknown category tokens or missing columns; every
        offending line is listed.
    ValidationError
        Rows parse but break a record invariant (duplicate days, events after
        cutoff, ...).
    """
    metadata, header, rows = _read_rows(Path(path).read_text(encoding="utf-8"), column_map)
    parse_errors: list[tuple[Optional[int], str]] = []
    if "patient_id" not in header:
        raise ParseError([(1, "missing required column 'patient_id'")])
    has_day = "day" in header or ("date" in header and "start_date" in header)
    if not has_day or "category" not in header:
        raise ParseError([(1, "missing required column(s) 'day'/'category'")])

    level_rows: dict[str, list[tuple[int, dict]]] = {}
    if patients_path is not None:
        _, pheader, prow_list = _read_rows(Path(patients_path).read_text(encoding="utf-8"), column_map)
        for ln, row, err in prow_list:
            if err:
                parse_errors.append((ln, f"{Path(patients_path).name}: {err}"))
                continue
            level_rows.setdefault(row.get("patient_id", ""), []).append((ln, row))
        level_source = Path(patients_path).name
    else:
        level_source = None

    # patient id -> list of (line, Assessment | None)
    per_patient: dict[str, list[tuple[int, Optional[Assessment]]]] = {}
    patient_fields: dict[str, list[tuple[int, dict]]] = {}
    for ln, row, err in rows:
        if err:
            parse_errors.append((ln, err))
            continue
        pid = row["patient_id"]
        if not pid:
            parse_errors.append((ln, "empty patient_id"))
            continue
        try:
            day = _day_value(row, "day")
            cat_token = row.get("category", "")
            if day is None and not cat_token:
                assessment = None
            elif day is None or not cat_token:
                raise ValueError("day and category must both be given or both be empty")
            else:
                assessment = Assessment(day, ResponseCategory.parse(cat_token))
        except ValueError as exc:
            parse_errors.append((ln, str(exc)))
            continue
        per_patient.setdefault(pid, []).append((ln, assessment))
        if level_source is None:
            patient_fields.setdefault(pid, []).append((ln, row))
    if level_source is not None:
        patient_fields = level_rows
        for pid, entries in level_rows.items():
            if pid and pid not in per_patient:
                per_patient[pid] = [(entries[0][0], None)]

    def parse_level(pid):
        entries = patient_fields.get(pid)
        if not entries:
            return None, [(per_patient[pid][0][0], f"patient {pid!r} has no patient-level row")]
        errs, values = [], None
        for ln, row in entries:
            try:
                cutoff = _day_value(row, "cutoff_day")
                if cutoff is None:
                    raise ValueError("cutoff_day is required")
                v = {
                    "cutoff_day": cutoff,
                    "baseline_measurable": _parse_bool(row["baseline_measurable"], "baseline_measurable")
                    if row.get("baseline_measurable", "") != "" else True,
                }
                for name in _OPTIONAL_DAYS:
                    v[name] = _day_value(row, name)
            except ValueError as exc:
                errs.append((ln, f"{level_source + ': ' if level_source else ''}{exc}"))
                continue
            if values is None:
                values = v
            elif v != values:
                errs.append((ln, f"patient {pid!r}: patient-level values differ from earlier rows"))
        return values, errs

    levels = {}
    for pid in per_patient:
        values, errs = parse_level(pid)
        parse_errors += errs
        levels[pid] = values
    if parse_errors:
        raise ParseError(sorted(parse_errors, key=lambda e: (e[0] or 0)))

    problems: list[tuple[Optional[int], str]] = []
    patients = []
    for pid, entries in per_patient.items():
        seen_days: dict[int, int] = {}
        assessments = []
        for ln, a in entries:
            if a is None:
                continue
            if a.day in seen_days:
                problems.append((ln, f"patient {pid!r}: duplicate assessment day {a.day} "
                                     f"(first on line {seen_days[a.day]})"))
                continue
            seen_days[a.day] = ln
            assessments.append(a)
        assessments.sort(key=lambda a: a.day)
        lines = [ln for ln, _ in entries]
        try:
            patients.append(PatientRecord(id=pid, assessments=tuple(assessments), **levels[pid]))
        except ValidationError as exc:
            problems += [(lines[0], f"{msg} (rows {lines[0]}-{lines[-1]})") for _, msg in exc.problems]
    if problems:
        raise ValidationError(sorted(problems, key=lambda e: (e[0] or 0)))
    return Dataset(tuple(patients), metadata)


def _fmt_opt(v: Optional[int]) -> str:
    return "" if v is None else str(v)


def dataset_to_csv(dataset: Dataset) -> str:
    buf = _io.StringIO()
    for k, v in dataset.metadata.items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CANONICAL_COLUMNS)
    for p in dataset.patients:
        level = [
            "true" if p.baseline_measurable else "false",
            _fmt_opt(p.death_day),
            _fmt_opt(p.new_therapy_day),
            _fmt_opt(p.treatment_stop_day),
            str(p.cutoff_day),
        ]
        if not p.assessments:
            w.writerow([p.id, "", ""] + level)
        for a in p.assessments:
            w.writerow([p.id, a.day, a.category.value] + level)
    return buf.getvalue()


def write_dataset(dataset: Dataset, path: PathLike) -> None:
    Path(path).write_text(dataset_to_csv(dataset), encoding="utf-8")


# --------------------------------------------------------------------------- reports

def _fmt_num(v: Optional[float]) -> str:
    return "nr" if v is None else f"{v:.2f}"


def format_row_result(row: ReportRow) -> str:
    if row.ci_lower is None and row.ci_upper is None and row.kind == "edor":
        return _fmt_num(row.estimate)
    return f"{_fmt_num(row.estimate)} ({_fmt_num(row.ci_lower)}, {_fmt_num(row.ci_upper)})"


def report_to_dict(report: EstimandReport) -> dict:
    return dataclasses.asdict(report)


def report_from_dict(d: Mapping[str, Any]) -> EstimandReport:
    d = dict(d)
    d["rows"] = [ReportRow(**r) for r in d.get("rows", [])]
    return EstimandReport(**d)


def _markdown(reports: Sequence[EstimandReport]) -> str:
    out = ["| Number | Description | Population | Result |", "|---|---|---|---|"]
    k = 0
    for rep in reports:
        for row in rep.rows:
            k += 1
            out.append(f"| {k} | {row.description} | {row.population} | {format_row_result(row)} |")
    out += [
        "",
        "| Estimand | N | Events | Censored | Competing | Median [months] (CI) |",
        "|---|---|---|---|---|---|",
    ]
    for rep in reports:
        cens = ", ".join(f"{k}: {v}" for k, v in rep.censoring.items()) or "0"
        comp = ", ".join(f"{k}: {v}" for k, v in rep.competing.items()) or "-"
        if rep.median_months is not None:
            m = rep.median_months
            med = f"{_fmt_num(m[0])} ({_fmt_num(m[1])}, {_fmt_num(m[2])})"
        else:
            med = "-"
        out.append(f"| {rep.spec_name} | {rep.n} | {rep.n_events} | {cens} | {comp} | {med} |")
    out += ["", "nr - not reached"]
    return "\n".join(out) + "\n"


def write_report(reports: Sequence[EstimandReport], format: str = "json") -> bytes:
    """Serialise reports; json keeps full precision, markdown rounds to 2 decimals."""
    if format == "json":
        payload = [report_to_dict(r) for r in reports]
        return (json.dumps(payload, indent=2, allow_nan=False) + "\n").encode("utf-8")
    if format in ("markdown", "md"):
        return _markdown(reports).encode("utf-8")
    raise ValueError(f"unknown report format {format!r}")


def read_reports(data: Union[bytes, str]) -> list[EstimandReport]:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return [report_from_dict(d) for d in json.loads(data)]


def bor_table(patients: Iterable[PatientRecord], results: Mapping[str, Any]) -> list[dict]:
    """Per-patient BOR rows for display (``results`` maps id -> BorResult or None)."""
    rows = []
    for p in patients:
        r = results.get(p.id)
        if r is None:
            rows.append({"patient_id": p.id, "bor": None, "onset_day": None,
                         "onset_months": None, "responder": None, "evaluable": False})
            continue
        rows.append({
            "patient_id": p.id,
            "bor": r.bor.value,
            "onset_day": r.onset_day,
            "onset_months": None if r.onset_day is None else round(days_to_months(r.onset_day), 4),
            "responder": r.is_responder,
            "evaluable": True,
        })
    return rows


# --------------------------------------------------------------------------- config

def _enum_plain(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _enum_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_enum_plain(v) for v in obj]
    return obj


def spec_to_dict(spec: EstimandSpec) -> dict:
    d = dataclasses.asdict(spec)
    return _enum_plain(d)


def spec_from_dict(d: Mapping[str, Any], name: Optional[str] = None) -> EstimandSpec:
    d = dict(d)
    allowed = {f.name for f in dataclasses.fields(EstimandSpec)}
    unknown = set(d) - allowed
    if unknown:
        raise InvalidConfig(f"unknown estimand field(s): {sorted(unknown)}")
    if name is not None:
        d.setdefault("name", name)
    if "summary" in d:
        s = dict(d["summary"])
        d["summary"] = SummarySpec(s.get("measure", "km"), tuple(s.get("rows", ("median", "landmark"))))
    if "bor_cfg" in d:
        try:
            d["bor_cfg"] = BorConfig(**d["bor_cfg"])
        except TypeError as exc:
            raise InvalidConfig(f"bad bor_cfg: {exc}") from None
    try:
        return EstimandSpec(**d)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


def sim_config_to_dict(cfg: TrialSimConfig) -> dict:
    d = dataclasses.asdict(cfg)
    sched = d["schedule"]
    sched["cycles"] = list(sched["cycles"])
    if sched["days"] is not None:
        sched["days"] = list(sched["days"])
    return d


def sim_config_from_dict(d: Mapping[str, Any]) -> TrialSimConfig:
    d = dict(d)
    allowed = {f.name for f in dataclasses.fields(TrialSimConfig)}
    unknown = set(d) - allowed
    if unknown:
        raise InvalidConfig(f"unknown simulation field(s): {sorted(unknown)}")
    if "schedule" in d:
        s = dict(d["schedule"] or {})
        if "cycles" in s:
            s["cycles"] = tuple(s["cycles"])
        if s.get("days") is not None:
            s["days"] = tuple(s["days"])
        try:
            d["schedule"] = AssessmentSchedule(**s)
        except TypeError as exc:
            raise InvalidConfig(f"bad schedule: {exc}") from None
    try:
        return TrialSimConfig(**d)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


@dataclass
class ConfigFile:
    """Contents of a YAML config file (all sections optional)."""

    estimands: dict = field(default_factory=dict)
    simulation: Optional[TrialSimConfig] = None
    columns: dict = field(default_factory=dict)


def load_config(path: PathLike) -> ConfigFile:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise InvalidConfig(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise InvalidConfig(f"{path}: top level must be a mapping")
    unknown = set(raw) - {"estimands", "simulation", "columns"}
    if unknown:
        raise InvalidConfig(f"{path}: unknown section(s) {sorted(unknown)}")
    est = {name: spec_from_dict(body or {}, name) for name, body in (raw.get("estimands") or {}).items()}
    sim = sim_config_from_dict(raw["simulation"]) if raw.get("simulation") else None
    return ConfigFile(est, sim, dict(raw.get("columns") or {}))


def dump_config(cfg: ConfigFile) -> str:
    out: dict = {}
    if cfg.estimands:
        out["estimands"] = {}
        for name, spec in cfg.estimands.items():
            d = spec_to_dict(spec)
            d.pop("name")
            out["estimands"][name] = d
    if cfg.simulation is not None:
        out["simulation"] = sim_config_to_dict(cfg.simulation)
    if cfg.columns:
        out["columns"] = dict(cfg.columns)
    return yaml.safe_dump(out, sort_keys=False)
