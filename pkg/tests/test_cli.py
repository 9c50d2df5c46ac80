from __future__ import annotations

import contextlib
import csv
import io
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from sotifreq.cli import (PLOT_KINDS, RequirementRecord, atomic_write, emit_plot_data, load_config, main)
from sotifreq.errors import ConfigError, UnknownKind

SMALL = {
    "recording": {"n_slots": 10},
    "perception": {"sequence": {"n_frames": 30, "n_objects": 4}, "n_train": 1, "n_test": 1,
                   "steps": 21, "runs": 3},
}


def run_cli(*argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf), contextlib.redirect_stderr(io.StringIO()):
        code = main([str(a) for a in argv])
    lines = [ln for ln in buf.getvalue().splitlines() if ln.strip()]
    return code, (json.loads(lines[-1]) if lines else None)


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.json"
    p.write_text(json.dumps(SMALL))
    return p


@pytest.fixture(scope="module")
def pipeline_out(tmp_path_factory, small_config):
    out = tmp_path_factory.mktemp("pipe")
    code, summary = run_cli("pipeline", "--config", small_config, "--out", out)
    assert code == 0, summary
    return out, summary


def test_pipeline_summary_and_ledger(pipeline_out):
    out, summary = pipeline_out
    assert summary["ok"] is True
    assert summary["records"]["system"] == 1
    assert summary["records"]["subsystem"] >= 2
    assert summary["records"]["component"] == 6
    recs = json.loads((out / "requirements.json").read_text())
    for r in recs:
        RequirementRecord(**r)
    with open(out / "requirements.csv") as fh:
        assert len(list(csv.DictReader(fh))) == len(recs)
    for name in ("cutins.json", "comparison.csv", "severity_curve.csv", "velocity_curve.csv",
                 "partition_probs.csv", "fn_allocation.csv", "metric_dataset.csv", "shap.csv",
                 "component_allocation.json", "verification.json", "performance.csv"):
        assert (out / name).is_file(), name
    assert not [p for p in out.rglob(".*") if p.is_file()]


def test_allocate_fn_table_shape(pipeline_out):
    out, _ = pipeline_out
    with open(out / "fn_allocation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    p = [float(r["fn_rate_per_h"]) for r in rows]
    assert all(b >= a for a, b in zip(p, p[1:]))
    lows = [float(r["partition_low_m"]) for r in rows]
    assert lows == [25.0 * i for i in range(8)]


def test_severity_curve_record(tmp_path):
    code, s = run_cli("severity-curve", "--out", tmp_path, "--points", 56)
    assert code == 0
    rec = json.loads((tmp_path / "severity.json").read_text())
    assert 16.0 <= rec["position_error_budget_m"] <= 18.0
    assert rec["d_min_m"] == pytest.approx(109.406, abs=1e-3)
    with open(tmp_path / "severity_curve.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 56
    assert list(rows[0]) == list(PLOT_KINDS["severity"])


def test_position_budget_equal_speeds_never_exceeds(tmp_path):
    code, s = run_cli("position-budget", "--out", tmp_path, "--vr", 80, "--vf", 80)
    assert code == 0
    assert s["position_error_budget_m"] is None and "never exceeds" in s["note"]
    assert s["d_min_m"] == pytest.approx(26.2656, abs=1e-3)


def test_velocity_budget_flag(tmp_path):
    code, s = run_cli("velocity-budget", "--out", tmp_path, "--pos-budget", 17)
    assert code == 0
    rec = json.loads((tmp_path / "velocity_budget.json").read_text())
    assert rec["velocity_error_budget_kmh"] == pytest.approx(9.80, abs=0.01)


def test_unknown_subcommand_exit_code():
    code, _ = run_cli("frobnicate")
    assert code == 2


def test_unknown_config_key(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"bogus": 1}))
    code, s = run_cli("severity-curve", "--config", p, "--out", tmp_path)
    assert code == 2 and s["error"] == "ConfigError"
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_missing_input_file(tmp_path):
    code, s = run_cli("allocate-fn", "--out", tmp_path)
    assert code == 2 and "not found" in s["message"]


def test_bad_tracks_file(tmp_path):
    (tmp_path / "t.csv").write_text("frame,id\n0,1\n")
    (tmp_path / "m.csv").write_text("frameRate,laneMarkings\n25,0;3.75;7.5\n")
    code, s = run_cli("extract-cutins", "--out", tmp_path, "--tracks", tmp_path / "t.csv",
                      "--meta", tmp_path / "m.csv")
    assert code == 3 and s["error"] == "MissingColumn"


def test_infeasible_component_requirement(pipeline_out, tmp_path):
    out, _ = pipeline_out
    code, s = run_cli("allocate-components", "--out", tmp_path, "--shap", out / "shap.json",
                      "--requirement", -1)
    assert code == 4 and s["error"] == "Infeasible"
    assert s["min_achievable"] > -1


def test_runs_are_reproducible(pipeline_out, small_config, tmp_path):
    out, _ = pipeline_out
    for name in ("metric_dataset.csv", "shap.json", "component_allocation.json"):
        (tmp_path / name).parent.mkdir(parents=True, exist_ok=True)
    code, _ = run_cli("gen-synthetic", "--config", small_config, "--out", tmp_path)
    assert code == 0
    code, _ = run_cli("metric-dataset", "--config", small_config, "--out", tmp_path)
    assert code == 0
    assert (tmp_path / "metric_dataset.csv").read_text() == (out / "metric_dataset.csv").read_text()


def test_extract_cutins_seed_flag_changes_recording(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli("extract-cutins", "--out", a, "--seed", 1)
    run_cli("extract-cutins", "--out", b, "--seed", 2)
    assert (a / "tracks.csv").read_text() != (b / "tracks.csv").read_text()
    code, s = run_cli("extract-cutins", "--out", a, "--seed", 1)
    assert code == 0 and s["ok"]


def test_emit_plot_data_kinds(tmp_path):
    from sotifreq import KMH
    from sotifreq.severity import SeverityConfig, severity_curve, velocity_error_curve

    curve = severity_curve(SeverityConfig(130 * KMH, 80 * KMH), 0.0, 50.0, 6)
    text = emit_plot_data(curve, "severity", tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text() == text
    assert text.splitlines()[0] == ",".join(PLOT_KINDS["severity"])
    assert len(text.splitlines()) == 7
    vel = emit_plot_data(velocity_error_curve([30.0], 5.0, n_points=3), "velocity")
    assert len(vel.splitlines()) == 4
    with pytest.raises(UnknownKind):
        emit_plot_data(curve, "histogram")


def test_atomic_write_leaves_no_partial(tmp_path):
    p = tmp_path / "sub" / "x.txt"
    atomic_write(p, "hello")
    assert p.read_text() == "hello"

    with pytest.raises(TypeError):
        atomic_write(p, 123)
    assert p.read_text() == "hello"
    assert [q.name for q in p.parent.iterdir()] == ["x.txt"]


def test_requirement_record_validation():
    with pytest.raises(ValueError):
        RequirementRecord("x", "team", "q", 1.0, "u", "p")
    with pytest.raises(ValueError):
        RequirementRecord("x", "system", "q", 1.0, "u", "")


def test_console_entry_point(tmp_path):
    env = dict(os.environ)
    out = subprocess.run([sys.executable, "-m", "sotifreq.cli", "velocity-budget", "--out", str(tmp_path),
                          "--pos-budget", "17"], capture_output=True, text=True, env=env)
    assert out.returncode == 0
    assert json.loads(out.stdout.splitlines()[-1])["ok"] is True
    bad = subprocess.run([sys.executable, "-m", "sotifreq.cli", "nope"], capture_output=True, text=True)
    assert bad.returncode == 2
