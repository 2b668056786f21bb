"""Command-line interface: ``dorttr {derive,estimate,simulate,plot}``.

Exit codes: 0 ok, 1 usage error (unknown spec, bad figure kind, bad flags),
2 parse error, 3 validation error, 4 estimation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .domain import BorConfig, compute_orr, derive_bor, months_to_days
from .errors import (
    DorttrError,
    EmptyPopulation,
    InvalidConfig,
    InvalidSpec,
    NotEvaluable,
    ParseError,
    SpecMismatch,
    UnsupportedConfig,
    ValidationError,
)
from .estimand import builtin_specs
from .estimators import CiTransform, fit_curve, summarize
from .io import Dataset, bor_table, load_config, read_assessments, write_dataset, write_report
from .plots import PlotOptions, plot_step, plot_swimmer
from .sim import TrialSimConfig, simulate_trial, true_summaries

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_VALIDATION, EXIT_ESTIMATION = 0, 1, 2, 3, 4

# Reporting order for --all: the DOR rows, then the TTR rows, then the two
# extra new-therapy variants of cDOR.
REPORT_ORDER = (
    "dor_traditional",
    "time_in_response",
    "edor",
    "ttr_traditional",
    "ttr_tp_maxfu",
    "ttr_cif",
    "dor_tp",
    "dor_while_on",
)

FIGURES = {
    "km-cdor": "dor_traditional",
    "km-cttr": "ttr_traditional",
    "km": None,
    "cif": None,
    "pbir": "edor",
    "swimmer": None,
}

_TIME_RE = re.compile(r"^\s*(\d+(?:\.\d*)?|\.\d+)\s*(d|day|days|mo|month|months)?\s*$", re.I)


class UsageError(DorttrError):
    pass


def parse_time(text: str) -> float:
    """``180d`` / ``6mo`` / bare number of days -> days."""
    m = _TIME_RE.match(text)
    if not m:
        raise argparse.ArgumentTypeError(f"bad time {text!r}; use e.g. 180d or 6mo")
    value = float(m.group(1))
    unit = (m.group(2) or "d").lower()
    return months_to_days(value) if unit.startswith("mo") else value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_data(p):
    p.add_argument("--data", required=True, help="assessment CSV (canonical merged format)")
    p.add_argument("--patients", help="optional patient-level CSV")
    p.add_argument("--config", help="YAML config with estimands and/or column mapping")
    p.add_argument("--confirm", action=argparse.BooleanOptionalAction, default=None,
                   help="require confirmation of PR/CR (default: no)")
    p.add_argument("--confirm-gap", type=parse_time, default=None,
                   help="minimum gap for confirmation (default 28d)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dorttr", description="Response endpoint derivation and estimation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("derive", help="per-patient BOR, onset, and cohort ORR")
    _add_data(p)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out")

    p = sub.add_parser("estimate", help="estimate one or all estimands")
    _add_data(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--spec", action="append", help="estimand name (repeatable)")
    g.add_argument("--all", action="store_true", help="every builtin estimand")
    p.add_argument("--landmark", type=parse_time, default=months_to_days(6))
    p.add_argument("--tau", type=parse_time, default=None, help="EDOR truncation time")
    p.add_argument("--format", choices=("json", "markdown"), default="markdown")
    p.add_argument("--ci-transform", choices=[t.value for t in CiTransform], default="log",
                   help="CI scale for KM curves")
    p.add_argument("--cif-ci-transform", choices=[t.value for t in CiTransform], default="loglog",
                   help="CI scale for cumulative incidence")
    p.add_argument("--out")

    p = sub.add_parser("simulate", help="write a simulated dataset")
    p.add_argument("--config", help="YAML config with a simulation section")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n", type=int, default=None, help="number of patients")
    p.add_argument("--replicate", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("plot", help="render an SVG figure")
    _add_data(p)
    p.add_argument("--kind", required=True, help=f"one of {', '.join(FIGURES)}")
    p.add_argument("--spec", help="estimand for km/cif/pbir figures")
    p.add_argument("--ci-transform", choices=[t.value for t in CiTransform], default="log")
    p.add_argument("--no-ci", action="store_true", help="omit the CI band")
    p.add_argument("--title", default="")
    p.add_argument("--out", required=True)
    return parser


def _emit(data: bytes, out: Optional[str]) -> None:
    if out:
        Path(out).write_bytes(data)
    else:
        sys.stdout.write(data.decode("utf-8"))


def _bor_cfg(args) -> BorConfig:
    cfg = BorConfig()
    if args.confirm is not None:
        cfg = replace(cfg, require_confirmation=args.confirm)
    if args.confirm_gap is not None:
        cfg = replace(cfg, min_confirmation_gap_days=int(round(args.confirm_gap)))
    return cfg


def _load(args):
    config = load_config(args.config) if args.config else None
    columns = config.columns if config else None
    ds: Dataset = read_assessments(args.data, args.patients, columns or None)
    return ds, config


def _specs(args, config):
    bor_cfg = _bor_cfg(args)
    specs = builtin_specs(bor_cfg)
    if config:
        for name, s in config.estimands.items():
            specs[name] = replace(s, bor_cfg=bor_cfg) if args.confirm is not None else s
    return specs


def cmd_derive(args) -> int:
    ds, _ = _load(args)
    cfg = _bor_cfg(args)
    results = {}
    for p in ds.patients:
        try:
            results[p.id] = derive_bor(p, cfg)
        except NotEvaluable as exc:
            print(f"warning: {exc}", file=sys.stderr)
            results[p.id] = None
    orr = compute_orr(ds.patients, cfg)
    rows = bor_table(ds.patients, results)
    if args.format == "json":
        payload = {
            "patients": rows,
            "orr": {"responders": orr.n_responders, "evaluable": orr.n_total,
                    "estimate": orr.proportion, "ci_lower": orr.ci_lower,
                    "ci_upper": orr.ci_upper, "excluded": list(orr.excluded)},
        }
        _emit((json.dumps(payload, indent=2) + "\n").encode(), args.out)
        return EXIT_OK
    lines = [f"{'patient_id':<12} {'BOR':<4} {'onset_day':>9} {'onset_mo':>8} responder"]
    for r in rows:
        if not r["evaluable"]:
            lines.append(f"{r['patient_id']:<12} {'-':<4} {'-':>9} {'-':>8} not evaluable")
            continue
        od = "-" if r["onset_day"] is None else str(r["onset_day"])
        om = "-" if r["onset_months"] is None else f"{r['onset_months']:.2f}"
        lines.append(f"{r['patient_id']:<12} {r['bor']:<4} {od:>9} {om:>8} {'yes' if r['responder'] else 'no'}")
    lines.append(
        f"ORR: {orr.proportion:.1%} ({orr.n_responders}/{orr.n_total}), "
        f"{orr.conf_level:.0%} CI ({orr.ci_lower:.1%}, {orr.ci_upper:.1%}); "
        f"excluded: {len(orr.excluded)}"
    )
    _emit(("\n".join(lines) + "\n").encode(), args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    ds, config = _load(args)
    specs = _specs(args, config)
    if args.all:
        names = [n for n in REPORT_ORDER if n in specs]
    else:
        names = args.spec
        unknown = [n for n in names if n not in specs]
        if unknown:
            raise UsageError(f"unknown spec {', '.join(unknown)}; valid: {', '.join(specs)}")
    reports = [
        summarize(ds.patients, specs[n], landmark_days=args.landmark, tau_days=args.tau,
                  transform=args.ci_transform, cif_transform=args.cif_ci_transform)
        for n in names
    ]
    _emit(write_report(reports, args.format), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = TrialSimConfig()
    if args.config:
        loaded = load_config(args.config).simulation
        if loaded is None:
            raise InvalidConfig(f"{args.config}: no simulation section")
        cfg = loaded
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.n is not None:
        cfg = replace(cfg, n_patients=args.n)
    patients = simulate_trial(cfg, args.replicate)
    meta = {"seed": str(cfg.seed), "n_patients": str(cfg.n_patients)}
    if args.replicate is not None:
        meta["replicate"] = str(args.replicate)
    write_dataset(Dataset(patients, meta), args.out)

    orr = compute_orr(patients)
    print(f"wrote {len(patients)} patients to {args.out}")
    print(f"responders: {orr.n_responders}/{orr.n_total}")
    try:
        t = true_summaries(cfg)
    except UnsupportedConfig as exc:
        print(f"analytic truths unavailable: {exc}")
        return EXIT_OK
    print("analytic truths (continuous time):")
    print(f"  P(response)          {t.p_response:.6f}")
    med = "inf" if t.ttr_conditional_median is None else f"{t.ttr_conditional_median:.4f}"
    print(f"  cTTR median [days]   {med}")
    print(f"  DOR median [days]    {t.dor_median:.4f}")
    lm = months_to_days(6)
    print(f"  CIF(6 mo)            {t.response_cif(lm):.6f}")
    print(f"  PBIR(6 mo)           {t.pbir(lm):.6f}")
    print(f"  EDOR(6 mo) [days]    {t.edor_days(lm):.4f}")
    return EXIT_OK


def cmd_plot(args) -> int:
    if args.kind not in FIGURES:
        raise UsageError(f"unknown figure kind {args.kind!r}; valid: {', '.join(FIGURES)}")
    ds, config = _load(args)
    opts = PlotOptions(title=args.title, show_ci=not args.no_ci)
    if args.kind == "swimmer":
        cfg = _bor_cfg(args)
        results = {}
        for p in ds.patients:
            try:
                results[p.id] = derive_bor(p, cfg)
            except NotEvaluable:
                results[p.id] = None
        svg = plot_swimmer(ds.patients, results, replace(opts, margin_left=90))
    else:
        specs = _specs(args, config)
        name = args.spec or FIGURES[args.kind] or {"km": "dor_traditional", "cif": "ttr_cif"}[args.kind]
        if name not in specs:
            raise UsageError(f"unknown spec {name}; valid: {', '.join(specs)}")
        try:
            curve = fit_curve(ds.patients, specs[name], transform=args.ci_transform)
        except EmptyPopulation as exc:
            print(f"warning: {exc}; writing an empty figure", file=sys.stderr)
            svg = plot_swimmer([], {}, opts)
        else:
            svg = plot_step(curve, opts)
    Path(args.out).write_bytes(svg)
    return EXIT_OK


COMMANDS = {"derive": cmd_derive, "estimate": cmd_estimate, "simulate": cmd_simulate, "plot": cmd_plot}


def _report_problems(exc) -> None:
    for line, msg in exc.problems:
        where = f"line {line}: " if line is not None else ""
        print(f"{where}{msg}", file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print("parse error:", file=sys.stderr)
        _report_problems(exc)
        return EXIT_PARSE
    except (ValidationError, InvalidConfig, InvalidSpec) as exc:
        print("validation error:", file=sys.stderr)
        if isinstance(exc, ValidationError):
            _report_problems(exc)
        else:
            print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except (EmptyPopulation, SpecMismatch, DorttrError) as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
