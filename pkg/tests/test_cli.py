import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import pytest

from dorttr.cli import EXIT_ESTIMATION, EXIT_OK, EXIT_PARSE, EXIT_USAGE, EXIT_VALIDATION, main, parse_time
from dorttr.io import read_assessments, read_reports


def test_parse_time():
    assert parse_time("180d") == 180
    assert parse_time("6mo") == pytest.approx(182.625)
    assert parse_time("90") == 90
    with pytest.raises(Exception):
        parse_time("six months")


def test_derive_text(golden_path, capsys):
    assert main(["derive", "--data", golden_path]) == EXIT_OK
    out = capsys.readouterr().out
    assert "ORR: 79.3% (23/29)" in out and "excluded: 1" in out
    assert "not evaluable" in out


def test_derive_json(golden_path, tmp_path):
    out = tmp_path / "bor.json"
    assert main(["derive", "--data", golden_path, "--format", "json", "--out", str(out)]) == EXIT_OK
    payload = json.loads(out.read_text())
    assert payload["orr"]["responders"] == 23 and payload["orr"]["evaluable"] == 29
    assert len(payload["patients"]) == 30


def test_no_confirm_changes_responders(golden_path, capsys):
    main(["derive", "--data", golden_path, "--format", "json"])
    confirmed = json.loads(capsys.readouterr().out)["orr"]["responders"]
    main(["derive", "--data", golden_path, "--format", "json", "--no-confirm"])
    assert json.loads(capsys.readouterr().out)["orr"]["responders"] >= confirmed


def test_estimate_all_json_round_trips(golden_path, tmp_path):
    out = tmp_path / "r.json"
    assert main(["estimate", "--data", golden_path, "--all", "--format", "json", "--out", str(out)]) == EXIT_OK
    reps = read_reports(out.read_bytes())
    assert [r.spec_name for r in reps][:3] == ["dor_traditional", "time_in_response", "edor"]
    assert len(reps) == 8


def test_estimate_markdown_default(golden_path, capsys):
    assert main(["estimate", "--data", golden_path, "--spec", "dor_traditional"]) == EXIT_OK
    assert "| 1 | cDOR: KM 6-month estimate (95% CI) | Responders | 0.74 (0.58, 0.94) |" in capsys.readouterr().out


def test_unknown_spec_is_usage_error(golden_path):
    assert main(["estimate", "--data", golden_path, "--spec", "nope"]) == EXIT_USAGE


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE


def test_parse_error_exit(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("")
    assert main(["derive", "--data", str(bad)]) == EXIT_PARSE
    assert main(["derive", "--data", str(tmp_path / "missing.csv")]) == EXIT_PARSE


def test_validation_error_exit(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("patient_id,day,category,baseline_measurable,death_day,new_therapy_day,treatment_stop_day,"
                    "cutoff_day\nA,56,PR,true,,,,40\n")
    assert main(["derive", "--data", str(bad)]) == EXIT_VALIDATION


def test_bad_config_exit(tmp_path, golden_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("bogus: 1\n")
    assert main(["estimate", "--data", golden_path, "--all", "--config", str(cfg)]) == EXIT_VALIDATION


def test_zero_responders_is_estimation_error(tmp_path):
    f = tmp_path / "sd.csv"
    f.write_text("patient_id,day,category,baseline_measurable,death_day,new_therapy_day,treatment_stop_day,"
                 "cutoff_day\nA,56,SD,true,,,,100\nB,56,SD,true,,,,100\n")
    assert main(["estimate", "--data", str(f), "--spec", "dor_traditional"]) == EXIT_ESTIMATION


def test_simulate_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--seed", "42", "--n", "40", "--out", str(a)]) == EXIT_OK
    first = capsys.readouterr().out
    assert main(["simulate", "--seed", "42", "--n", "40", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert "P(response)" in first and "responders:" in first
    assert len(read_assessments(a).patients) == 40


@pytest.mark.parametrize("kind", ["km-cdor", "km-cttr", "km", "cif", "pbir", "swimmer"])
def test_plot_kinds(golden_path, tmp_path, kind):
    out = tmp_path / f"{kind}.svg"
    assert main(["plot", "--data", golden_path, "--kind", kind, "--out", str(out)]) == EXIT_OK
    ET.fromstring(out.read_bytes())


def test_plot_bad_kind(golden_path, tmp_path):
    assert main(["plot", "--data", golden_path, "--kind", "pie", "--out", str(tmp_path / "x.svg")]) == EXIT_USAGE


def test_plot_empty_population_writes_canvas(tmp_path):
    f = tmp_path / "sd.csv"
    f.write_text("patient_id,day,category,baseline_measurable,death_day,new_therapy_day,treatment_stop_day,"
                 "cutoff_day\nA,56,SD,true,,,,100\n")
    out = tmp_path / "e.svg"
    assert main(["plot", "--data", str(f), "--kind", "km-cdor", "--out", str(out)]) == EXIT_OK
    ET.fromstring(out.read_bytes())


def test_console_entry_point(golden_path):
    r = subprocess.run([sys.executable, "-m", "dorttr.cli", "derive", "--data", golden_path],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "ORR:" in r.stdout
