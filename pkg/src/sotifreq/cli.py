"""Command-line interface.

Every subcommand reads one JSON config (``--config``, merged over the
shipped defaults), lets flags override it, writes its artifacts into the
output directory atomically and prints a one-line JSON summary.
Exit codes: 2 configuration error, 3 data error, 4 infeasible allocation.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import KMH, __version__
from .errors import (AlwaysExceeds, ConfigError, DataError, InfeasibleError, NeverExceeds,
                     SotifError, UnknownKind)

SUBCOMMANDS = ("extract-cutins", "compare-models", "severity-curve", "position-budget",
               "velocity-budget", "partition-probs", "allocate-fn", "gen-synthetic",
               "metric-dataset", "shap", "allocate-components", "verify", "pipeline")


# --- config ------------------------------------------------------------------

def default_config() -> dict:
    text = resources.files("sotifreq").joinpath("data/default_config.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base and where in ("", "perception."):
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(v, dict) and isinstance(base.get(k), dict) and base.get(k):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None) -> dict:
    cfg = default_config()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, user)
    if cfg.get("seed") is None:
        raise ConfigError("config needs an explicit seed")
    return cfg


# --- artifact writing --------------------------------------------------------

def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _csv_text(rows, header=None) -> str:
    rows = list(rows)
    header = list(header or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in header})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o).__name__)


PLOT_KINDS = {
    "trace": ("t", "x_ego", "v_ego", "x_obj", "v_obj", "a_cmd"),
    "severity": ("error_m", "delta_v_kmh", "segment", "collision"),
    "velocity": ("v_f_kmh", "e_v_kmh", "position_error_m"),
    "partition": ("duration", "partition_low", "prob"),
    "performance": ("setting", "metric", "score_pct"),
}


def emit_plot_data(artifact, kind: str, path=None) -> str:
    """Plain CSV for one figure-style artifact; written atomically when ``path`` is given."""
    if kind not in PLOT_KINDS:
        raise UnknownKind(f"unknown plot kind {kind!r}; expected one of {sorted(PLOT_KINDS)}")
    if kind in ("trace", "severity"):
        rows = list(artifact.rows())
    elif kind == "velocity":
        rows = [{"v_f_kmh": r["v_f"] / KMH, "e_v_kmh": r["e_v"] / KMH,
                 "position_error_m": r["position_error"]} for r in artifact]
    elif kind == "partition":
        rows = list(artifact.long_rows())
    else:
        rows = []
        perf = artifact.performance.get("requirement_levels", {})
        rows += [{"setting": "requirement_levels", "metric": k, "score_pct": v} for k, v in perf.items()]
        rows += [{"setting": "fn_channels_only", "metric": k, "score_pct": v}
                 for k, v in artifact.efficiency.get("scores", {}).items()]
    text = _csv_text(rows, PLOT_KINDS[kind])
    if path is not None:
        atomic_write(path, text)
    return text


@dataclass(frozen=True)
class RequirementRecord:
    name: str
    level: str
    quantity: str
    value: float | None
    units: str
    provenance: str

    def __post_init__(self):
        if self.level not in ("system", "subsystem", "component"):
            raise ValueError(f"bad requirement level {self.level!r}")
        if not self.provenance:
            raise ValueError("requirement provenance must be non-empty")


# --- shared builders ---------------------------------------------------------

class Run:
    """Resolved config plus the output directory for one invocation."""

    def __init__(self, cfg: dict, out):
        self.cfg = cfg
        self.out = Path(out)
        self.written: list[str] = []

    def write(self, name: str, text: str) -> Path:
        p = atomic_write(self.out / name, text)
        self.written.append(str(p))
        return p

    def path(self, name: str) -> Path:
        return self.out / name

    @property
    def seed(self) -> int:
        return int(self.cfg["seed"])


def _behavior(cfg):
    from .behavior import BehaviorParams

    return BehaviorParams.from_dict(cfg.get("behavior") or {})


def _trackset(run: Run):
    from .traffic import generate_recording
    from .trajectory import parse_meta, parse_tracks, write_meta, write_tracks

    paths = run.cfg["paths"]
    if paths.get("tracks"):
        for key in ("tracks", "meta"):
            if not paths.get(key) or not Path(paths[key]).is_file():
                raise ConfigError(f"paths.{key} does not name an existing file: {paths.get(key)}")
        meta = parse_meta(paths["meta"])
        return parse_tracks(paths["tracks"], meta, class_path=paths.get("classes")), "file"
    rec = run.cfg["recording"]
    ts = generate_recording(seed=run.seed, n_slots=int(rec["n_slots"]), slot_s=float(rec["slot_s"]),
                            frame_rate=float(rec["frame_rate"]), truck_share=float(rec["truck_share"]))
    run.out.mkdir(parents=True, exist_ok=True)
    for name, writer, obj in (("tracks.csv", write_tracks, ts), ("meta.csv", write_meta, ts.meta)):
        tmp = run.path(f".{name}.partial")
        writer(obj, tmp)
        os.replace(tmp, run.path(name))
        if str(run.path(name)) not in run.written:
            run.written.append(str(run.path(name)))
    return ts, "synthetic"


def _cutins(run: Run, ts):
    from .scenarios import WanderingZone, detect_cutins, filter_cutins

    c = run.cfg["cutins"]
    found = detect_cutins(ts, WanderingZone(), ego_range=float(c["ego_range"]))
    kept = filter_cutins(found, ts, ttc_threshold=float(c["ttc_threshold"]), car_only=bool(c["car_only"]))
    return found, kept


def _severity_cfg(run: Run):
    from .severity import SeverityConfig

    s = run.cfg["severity"]
    return SeverityConfig(float(s["v_r_kmh"]) * KMH, float(s["v_f_kmh"]) * KMH, _behavior(run.cfg).rss,
                          float(s["dt"]), float(s["dv_max_kmh"]) * KMH)


def _scheme(cfg):
    from .bayes import PartitionScheme

    p = cfg["partition"]
    return PartitionScheme(int(p["n_partitions"]), float(p["width_m"]))


def _seq_config(cfg):
    from .perception.synthetic import SequenceConfig

    return SequenceConfig.from_dict(cfg["perception"].get("sequence") or {})


def _tracker_params(cfg):
    from .perception.tracker import TrackerParams

    return TrackerParams(**(cfg["perception"].get("tracker") or {}))


def _sequences(run: Run, split: str):
    from .perception.synthetic import Sequence, generate_synthetic_sequence

    pc = run.cfg["perception"]
    n = int(pc[f"n_{split}"])
    base = int(pc[f"{split}_seed"])
    seqs = []
    for i in range(n):
        p = run.path(f"sequences/{split}_{i:02d}.jsonl")
        if p.exists():
            try:
                seqs.append(Sequence.read(p))
            except (ValueError, KeyError, json.JSONDecodeError) as exc:
                raise DataError(f"cannot read sequence {p}: {exc}") from exc
        else:
            seqs.append(generate_synthetic_sequence(_seq_config(run.cfg), seed=base * 1000 + run.seed * 100 + i))
    return seqs


def _harness(run: Run, split: str):
    from .perception.dataset import Harness

    return Harness(_sequences(run, split), None, _tracker_params(run.cfg),
                   float(run.cfg["perception"]["tau_iou"]))


def _load_json(path, what: str):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p} (run the producing subcommand first)")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{what} is not valid JSON: {exc}") from exc


# --- subcommands -------------------------------------------------------------

def cmd_extract_cutins(run: Run, args) -> dict:
    ts, source = _trackset(run)
    found, kept = _cutins(run, ts)
    run.write("cutins.json", _json_text({"detected": len(found), "kept": [c.to_dict() for c in kept],
                                         "source": source}))
    return {"detected": len(found), "kept": len(kept), "source": source}


def cmd_compare_models(run: Run, args) -> dict:
    from .behavior import compare_models

    ts, _ = _trackset(run)
    _, kept = _cutins(run, ts)
    comp = run.cfg["compare"]
    report, traces = compare_models(kept, ts, comp["models"], _behavior(run.cfg), float(comp["dt"]),
                                    keep_traces=True)
    run.write("comparison.csv", _csv_text(
        ({"scenario": r.scenario, "model": r.model, "collision": int(r.collision),
          "collision_dv_kmh": None if r.collision_dv is None else r.collision_dv / KMH,
          "min_gap_m": r.min_gap} for r in report.rows),
        ["scenario", "model", "collision", "collision_dv_kmh", "min_gap_m"]))
    colliding = sorted({r.scenario for r in report.rows if r.collision})
    for i, key in enumerate(colliding):
        for m in report.models:
            emit_plot_data(traces[(key, m)], "trace", run.path(f"traces/cutin{i:02d}_{m}.csv"))
            run.written.append(str(run.path(f"traces/cutin{i:02d}_{m}.csv")))
    summary = report.summary()
    run.write("comparison.json", _json_text(summary))
    return {"scenarios": len(kept), **{f"{m}_collisions": summary[m]["collisions"] for m in report.models}}


def _position_budget(cfg_sev, tol):
    from .severity import max_allowable_position_error

    try:
        return max_allowable_position_error(cfg_sev, tol=tol), None
    except NeverExceeds:
        return None, "never exceeds the delta-v limit"


def cmd_severity_curve(run: Run, args) -> dict:
    from .severity import severity_curve

    sev = _severity_cfg(run)
    s = run.cfg["severity"]
    e_max = s.get("error_max_m")
    e_max = float(e_max) if e_max else 1.05 * sev.d_min + 1.0
    curve = severity_curve(sev, 0.0, e_max, int(s["n_points"]))
    emit_plot_data(curve, "severity", run.path("severity_curve.csv"))
    run.written.append(str(run.path("severity_curve.csv")))
    budget, note = _position_budget(sev, float(s["tol_m"]))
    rec = {"v_r_kmh": sev.v_r / KMH, "v_f_kmh": sev.v_f / KMH, "dv_max_kmh": sev.dv_max / KMH,
           "dt": sev.dt, "d_min_m": sev.d_min, "position_error_budget_m": budget,
           "segment_order": curve.segment_order()}
    if note:
        rec["note"] = note
    run.write("severity.json", _json_text(rec))
    return rec


def cmd_position_budget(run: Run, args) -> dict:
    sev = _severity_cfg(run)
    budget, note = _position_budget(sev, float(run.cfg["severity"]["tol_m"]))
    rec = {"v_r_kmh": sev.v_r / KMH, "v_f_kmh": sev.v_f / KMH, "dv_max_kmh": sev.dv_max / KMH,
           "d_min_m": sev.d_min, "position_error_budget_m": budget}
    if note:
        rec["note"] = note
    run.write("position_budget.json", _json_text(rec))
    return rec


def cmd_velocity_budget(run: Run, args) -> dict:
    from .severity import max_allowable_velocity_error, velocity_error_curve

    v = run.cfg["velocity"]
    pos = getattr(args, "pos_budget", None)
    if pos is None:
        pos, note = _position_budget(_severity_cfg(run), float(run.cfg["severity"]["tol_m"]))
        if pos is None:
            raise ConfigError("no position budget available: " + note)
    rss = _behavior(run.cfg).rss
    e_v = max_allowable_velocity_error(float(pos), float(v["v_f_max_kmh"]) * KMH, rss)
    rows = velocity_error_curve([s * KMH for s in v["curve_speeds_kmh"]], float(v["e_v_max_kmh"]) * KMH, p=rss)
    emit_plot_data(rows, "velocity", run.path("velocity_curve.csv"))
    run.written.append(str(run.path("velocity_curve.csv")))
    rec = {"position_error_budget_m": float(pos), "v_f_max_kmh": float(v["v_f_max_kmh"]),
           "velocity_error_budget_kmh": e_v / KMH}
    run.write("velocity_budget.json", _json_text(rec))
    return rec


def cmd_partition_probs(run: Run, args) -> dict:
    from .bayes import partition_probabilities
    from .scenarios import extract_following_pairs

    ts, _ = _trackset(run)
    pairs = extract_following_pairs(ts, float(run.cfg["following"]["min_duration_s"]))
    b = run.cfg["bayes"]
    tab = partition_probabilities(pairs, ts, run.cfg["durations_s"], _scheme(run.cfg), _behavior(run.cfg).rss,
                                  float(b["dt"]), b["front"])
    run.write("partition_probs.json", _json_text(tab.to_dict()))
    run.write("partition_probs.csv", tab.to_csv())
    emit_plot_data(tab, "partition", run.path("partition_probs_long.csv"))
    run.written.append(str(run.path("partition_probs_long.csv")))
    return {"scenarios": tab.n_total, "durations": tab.durations,
            "max_prob": float(tab.probs.max()) if tab.probs.size else 0.0}


def _risk(cfg):
    from .bayes import RiskBudget

    r = cfg["risk"]
    return RiskBudget(float(r["lambda_per_h"]), float(r["p_c_given_e"]), float(r["p_s_given_c"]))


def cmd_allocate_fn(run: Run, args) -> dict:
    from .allocation import allocate_partition_requirements
    from .bayes import PartitionProbabilityTable

    src = getattr(args, "probs", None) or run.path("partition_probs.json")
    tab = PartitionProbabilityTable.from_dict(_load_json(src, "partition probability table"))
    a = run.cfg["allocation"]
    d = float(a["duration_s"])
    try:
        E = tab.row(d)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    risk = _risk(run.cfg)
    alloc = allocate_partition_requirements(E, risk.lambda_prime, C=float(a["confidence"]))
    lows = tab.scheme.lows
    rows = [{"partition_low_m": float(lo), "partition_high_m": float(lo + tab.scheme.width),
             "relevant_prob": float(e), "fn_rate_per_h": float(p), "budget_bound": int(e == 0)}
            for lo, e, p in zip(lows, E, alloc.p)]
    run.write("fn_allocation.csv", _csv_text(rows))
    k = tab.scheme.index(float(a["partition_low_m"]))
    if k is None:
        raise ConfigError(f"allocation.partition_low_m={a['partition_low_m']} is outside the partitions")
    rec = {**alloc.to_dict(), "duration_s": d, "lambda_prime_per_h": risk.lambda_prime,
           "partitions": rows, "subsystem": {"partition": tab.scheme.label(k), "partition_index": k,
                                             "fn_rate_per_h": float(alloc.p[k])}}
    run.write("fn_allocation.json", _json_text(rec))
    return {"partitions": len(rows), "cost": alloc.cost, "feasible": alloc.feasible,
            "monotone": bool(np.all(np.diff(alloc.p) >= 0)), "subsystem_requirement": float(alloc.p[k])}


def cmd_gen_synthetic(run: Run, args) -> dict:
    from .perception.synthetic import generate_synthetic_sequence

    pc = run.cfg["perception"]
    cfg = _seq_config(run.cfg)
    count = 0
    for split in ("train", "test"):
        base = int(pc[f"{split}_seed"])
        for i in range(int(pc[f"n_{split}"])):
            seq = generate_synthetic_sequence(cfg, seed=base * 1000 + run.seed * 100 + i)
            run.write(f"sequences/{split}_{i:02d}.jsonl", seq.to_jsonl())
            count += 1
    run.write("sequences/config.json", _json_text(cfg.to_dict()))
    return {"sequences": count, "frames_per_sequence": int(cfg.n_frames), "objects": int(cfg.n_objects)}


def cmd_metric_dataset(run: Run, args) -> dict:
    from .perception.dataset import build_metric_dataset
    from .perception.perturb import latin_grid

    h = _harness(run, "train")
    steps = int(run.cfg["perception"]["steps"])
    ds, _ = build_metric_dataset(h, latin_grid(steps, run.seed), seed=run.seed)
    run.write("metric_dataset.csv", ds.to_csv())
    return {"rows": len(ds), "outputs": list(ds.outputs), "sequences": len(h.sequences)}


def cmd_shap(run: Run, args) -> dict:
    from .shapley import PerturbationDataset, denormalize, explanations_csv, fit_perturbation_linear

    p = Path(getattr(args, "dataset", None) or run.path("metric_dataset.csv"))
    if not p.is_file():
        raise ConfigError(f"metric dataset not found: {p}")
    ds = PerturbationDataset.from_csv(p.read_text())
    norm = [fit_perturbation_linear(ds, name) for name in ds.outputs]
    raw = [denormalize(e, ds) for e in norm]
    run.write("shap.csv", explanations_csv(raw))
    run.write("shap_normalized.csv", explanations_csv(norm))
    run.write("shap.json", _json_text({"raw": [e.to_dict() for e in raw],
                                       "normalized": [e.to_dict() for e in norm],
                                       "normalization": ds.norm_constants()}))
    fn = next((e for e in raw if e.output_name == run.cfg["allocation"]["output"]), raw[0])
    return {"outputs": [e.output_name for e in raw], "phi0": fn.phi0, "phi": fn.phi.tolist()}


def cmd_allocate_components(run: Run, args) -> dict:
    from .allocation import allocate_component_requirements, kkt_residual
    from .perception.perturb import CHANNELS
    from .shapley import ShapleyExplanation

    a = run.cfg["allocation"]
    shap = _load_json(getattr(args, "shap", None) or run.path("shap.json"), "Shapley explanations")
    expl = next((ShapleyExplanation.from_dict(d) for d in shap["raw"] if d["output_name"] == a["output"]), None)
    if expl is None:
        raise ConfigError(f"no explanation for output {a['output']!r}")
    req = getattr(args, "requirement", None)
    if req is None:
        req = _load_json(run.path("fn_allocation.json"), "FN allocation")["subsystem"]["fn_rate_per_h"]
    alloc = allocate_component_requirements(expl.phi0, expl.phi, float(req), eps=float(a["eps"]),
                                            channel_names=list(CHANNELS))
    rec = {**alloc.to_dict(), "output": expl.output_name, "phi0": expl.phi0, "phi": expl.phi.tolist(),
           "kkt_residual": kkt_residual(alloc, expl.phi0, expl.phi)}
    run.write("component_allocation.json", _json_text(rec))
    return {"feasible": alloc.feasible, "cost": alloc.cost, "z": alloc.z.tolist(),
            "constraint_value": alloc.constraint_value, "requirement": float(req)}


def _verify_params(run: Run):
    pc = run.cfg["perception"]
    a = run.cfg["allocation"]
    fps = float(_seq_config(run.cfg).fps)
    min_run = max(1, int(round(float(a["duration_s"]) * fps)))
    lo = float(a["partition_low_m"])
    return int(pc["runs"]), min_run, (lo, lo + float(run.cfg["partition"]["width_m"]))


def cmd_verify(run: Run, args) -> dict:
    from .allocation import verify_allocation

    comp = _load_json(getattr(args, "allocation", None) or run.path("component_allocation.json"),
                      "component allocation")
    runs, min_run, window = _verify_params(run)
    runs = int(getattr(args, "runs", None) or runs)
    rep = verify_allocation(np.asarray(comp["z"], dtype=float), _harness(run, "test"), float(comp["requirement"]),
                            runs=runs, seed=run.seed, depth_window=window, min_run=min_run)
    run.write("verification.json", _json_text(rep.to_dict()))
    run.write("verification_runs.csv", rep.to_csv())
    emit_plot_data(rep, "performance", run.path("performance.csv"))
    run.written.append(str(run.path("performance.csv")))
    return {"runs": rep.runs, "subsystem_metric": rep.subsystem_metric, "requirement": rep.requirement,
            "pass": rep.passed, "most_improved": rep.efficiency["most_improved"]}


STEPS = [("extract-cutins", cmd_extract_cutins), ("compare-models", cmd_compare_models),
         ("severity-curve", cmd_severity_curve), ("velocity-budget", cmd_velocity_budget),
         ("partition-probs", cmd_partition_probs), ("allocate-fn", cmd_allocate_fn),
         ("gen-synthetic", cmd_gen_synthetic), ("metric-dataset", cmd_metric_dataset),
         ("shap", cmd_shap), ("allocate-components", cmd_allocate_components), ("verify", cmd_verify)]


def requirement_ledger(run: Run) -> list[RequirementRecord]:
    from .perception.perturb import CHANNEL_LABELS, CHANNELS

    recs = []
    risk = _risk(run.cfg)
    recs.append(RequirementRecord("system_risk", "system", "acceptable rate of hazardous events",
                                  risk.lam, "1/h", "config risk.lambda_per_h"))
    sev = _load_json(run.path("severity.json"), "severity record")
    recs.append(RequirementRecord(
        "position_error_budget", "subsystem", "max longitudinal position error of the object state",
        sev["position_error_budget_m"], "m",
        f"severity-curve v_r={sev['v_r_kmh']:g} km/h v_f={sev['v_f_kmh']:g} km/h dv_max={sev['dv_max_kmh']:g} km/h"))
    vel = _load_json(run.path("velocity_budget.json"), "velocity budget")
    recs.append(RequirementRecord(
        "velocity_error_budget", "subsystem", "max velocity error of the object state",
        vel["velocity_error_budget_kmh"] * KMH, "m/s",
        f"velocity-budget from {vel['position_error_budget_m']:.3f} m at v_f={vel['v_f_max_kmh']:g} km/h"))
    fn = _load_json(run.path("fn_allocation.json"), "FN allocation")
    for row in fn["partitions"]:
        lo, hi = row["partition_low_m"], row["partition_high_m"]
        recs.append(RequirementRecord(
            f"fn_rate_{lo:g}_{hi:g}m", "subsystem", f"FN rate of vehicles {lo:g} to {hi:g} m ahead",
            row["fn_rate_per_h"], "1/h",
            f"allocate-fn duration={fn['duration_s']:g} s lambda'={fn['lambda_prime_per_h']:.3g}/h"
            + (" (box bound: no relevant scenarios)" if row["budget_bound"] else "")))
    comp = _load_json(run.path("component_allocation.json"), "component allocation")
    for name, z in zip(CHANNELS, comp["z"]):
        recs.append(RequirementRecord(
            f"component_{name}", "component", CHANNEL_LABELS[name] + " quality level", float(z),
            "level (0 = original detector, 1 = ground truth)",
            f"allocate-components on output {comp['output']} requirement {comp['requirement']:.3g}"))
    return recs


def cmd_pipeline(run: Run, args) -> dict:
    steps = {}
    for name, fn in STEPS:
        steps[name] = fn(run, argparse.Namespace())
    recs = requirement_ledger(run)
    run.write("requirements.json", _json_text([asdict(r) for r in recs]))
    run.write("requirements.csv", _csv_text([asdict(r) for r in recs],
                                            ["name", "level", "quantity", "value", "units", "provenance"]))
    levels = [r.level for r in recs]
    return {"steps": list(steps), "records": {lv: levels.count(lv) for lv in ("system", "subsystem", "component")},
            "verification_pass": steps["verify"]["pass"], "subsystem_requirement":
            steps["allocate-fn"]["subsystem_requirement"]}


COMMANDS = dict(STEPS + [("position-budget", cmd_position_budget), ("pipeline", cmd_pipeline)])


# --- argument parsing --------------------------------------------------------

def _set(cfg, dotted: str, value, scale: float = 1.0):
    if value is None:
        return
    node = cfg
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node[k]
    node[keys[-1]] = value * scale if scale != 1.0 else value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sotifreq", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config merged over the shipped defaults")
    common.add_argument("--out", help="output directory (default: config paths.out)")
    common.add_argument("--seed", type=int)
    traj = argparse.ArgumentParser(add_help=False)
    traj.add_argument("--tracks", help="tracks CSV (omit to use the synthetic recording)")
    traj.add_argument("--meta", help="recording meta CSV")
    traj.add_argument("--classes", help="optional per-track class CSV")
    sev = argparse.ArgumentParser(add_help=False)
    sev.add_argument("--vr", type=float, help="rear speed, km/h")
    sev.add_argument("--vf", type=float, help="front speed, km/h")
    sev.add_argument("--dv-max", type=float, help="delta-v limit, km/h")
    sev.add_argument("--dt", type=float, help="simulation step, s")
    sub = p.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True

    s = sub.add_parser("extract-cutins", parents=[common, traj], help="detect and filter cut-ins")
    s.add_argument("--ttc", type=float, help="TTC threshold, s")
    s = sub.add_parser("compare-models", parents=[common, traj], help="replay cut-ins under RSS/FSM/CC")
    s.add_argument("--ttc", type=float)
    s.add_argument("--models", nargs="+")
    s = sub.add_parser("severity-curve", parents=[common, sev], help="delta-v against position error")
    s.add_argument("--error-max", type=float, help="largest error on the curve, m")
    s.add_argument("--points", type=int)
    sub.add_parser("position-budget", parents=[common, sev], help="largest tolerable position error")
    s = sub.add_parser("velocity-budget", parents=[common, sev], help="tolerable velocity error")
    s.add_argument("--pos-budget", type=float, help="position error budget, m (default: computed)")
    s.add_argument("--vf-max", type=float, help="max front speed, km/h")
    s = sub.add_parser("partition-probs", parents=[common, traj], help="relevant-scenario probabilities")
    s.add_argument("--durations", type=float, nargs="+", help="FN durations, s")
    s.add_argument("--front", choices=("brake", "replay"))
    s = sub.add_parser("allocate-fn", parents=[common], help="per-partition FN rate budgets")
    s.add_argument("--probs", help="partition_probs.json (default: in the output directory)")
    s.add_argument("--lambda", dest="lam", type=float, help="acceptable risk, 1/h")
    s.add_argument("--duration", type=float, help="FN duration row, s")
    s.add_argument("--confidence", type=float)
    s = sub.add_parser("gen-synthetic", parents=[common], help="write synthetic perception sequences")
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-test", type=int)
    s = sub.add_parser("metric-dataset", parents=[common], help="perturbation dataset")
    s.add_argument("--steps", type=int)
    s = sub.add_parser("shap", parents=[common], help="fit Shapley values of each output")
    s.add_argument("--dataset")
    s = sub.add_parser("allocate-components", parents=[common], help="component quality levels")
    s.add_argument("--shap")
    s.add_argument("--requirement", type=float)
    s.add_argument("--output", help="explained output to constrain (default fn)")
    s = sub.add_parser("verify", parents=[common], help="re-run perception at the allocated levels")
    s.add_argument("--allocation")
    s.add_argument("--runs", type=int)
    s = sub.add_parser("pipeline", parents=[common, traj], help="run every step and emit the ledger")
    s.add_argument("--runs", type=int)
    return p


def _apply_flags(cfg: dict, a) -> dict:
    cfg = copy.deepcopy(cfg)
    g = lambda k: getattr(a, k, None)  # noqa: E731
    _set(cfg, "seed", g("seed"))
    _set(cfg, "paths.out", g("out"))
    _set(cfg, "paths.tracks", g("tracks"))
    _set(cfg, "paths.meta", g("meta"))
    _set(cfg, "paths.classes", g("classes"))
    _set(cfg, "cutins.ttc_threshold", g("ttc"))
    _set(cfg, "compare.models", g("models"))
    _set(cfg, "severity.v_r_kmh", g("vr"))
    _set(cfg, "severity.v_f_kmh", g("vf"))
    _set(cfg, "severity.dv_max_kmh", g("dv_max"))
    _set(cfg, "severity.dt", g("dt"))
    _set(cfg, "severity.error_max_m", g("error_max"))
    _set(cfg, "severity.n_points", g("points"))
    _set(cfg, "velocity.v_f_max_kmh", g("vf_max"))
    _set(cfg, "durations_s", g("durations"))
    _set(cfg, "bayes.front", g("front"))
    _set(cfg, "risk.lambda_per_h", g("lam"))
    _set(cfg, "allocation.duration_s", g("duration"))
    _set(cfg, "allocation.confidence", g("confidence"))
    _set(cfg, "allocation.output", g("output"))
    _set(cfg, "perception.n_train", g("n_train"))
    _set(cfg, "perception.n_test", g("n_test"))
    _set(cfg, "perception.steps", g("steps"))
    _set(cfg, "perception.runs", g("runs"))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _apply_flags(load_config(args.config), args)
        run = Run(cfg, cfg["paths"]["out"])
        summary = COMMANDS[args.command](run, args)
    except ConfigError as exc:
        _fail(args.command, exc)
        return 2
    except DataError as exc:
        _fail(args.command, exc)
        return 3
    except (InfeasibleError, AlwaysExceeds) as exc:
        extra = {}
        if getattr(exc, "min_achievable", None) is not None:
            extra["min_achievable"] = exc.min_achievable
        _fail(args.command, exc, extra)
        return 4
    except (SotifError, ValueError, KeyError, TypeError) as exc:
        _fail(args.command, exc)
        return 2
    print(json.dumps({"command": args.command, "ok": True, **summary}, default=_json_default,
                     sort_keys=True))
    return 0


def _fail(command, exc, extra=None):
    print(json.dumps({"command": command, "ok": False, "error": type(exc).__name__, "message": str(exc),
                      **(extra or {})}, default=_json_default, sort_keys=True))
    print(f"sotifreq {command}: {exc}", file=sys.stderr)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
