"""Relevant-scenario probabilities per distance partition under FN injection.

A following pair becomes *relevant* for an FN duration ``d`` when the rear
vehicle, blind to its leader for the first ``d`` seconds and running RSS
afterwards, collides. Counts are split by the bumper gap at scenario
onset and divided by the total number of scenarios.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import G, kernels
from .behavior import RssParams, replay_input
from .errors import ConfigError, DanglingReference, EmptyInput, ZeroProbability
from .scenarios import FollowingScenario
from .trajectory import TrackSet

FRONT_MODES = ("brake", "replay")


@dataclass(frozen=True)
class PartitionScheme:
    n_partitions: int = 8
    width: float = 25.0
    origin: float = 0.0

    def __post_init__(self):
        if int(self.n_partitions) < 1:
            raise ConfigError("n_partitions must be >= 1")
        if not self.width > 0:
            raise ConfigError("partition width must be positive")

    @property
    def lows(self) -> np.ndarray:
        return self.origin + self.width * np.arange(self.n_partitions)

    def index(self, gap: float) -> int | None:
        """Partition holding ``gap`` (half-open), or None when outside all."""
        k = math.floor((gap - self.origin) / self.width)
        return k if 0 <= k < self.n_partitions else None

    def label(self, i: int) -> str:
        lo = self.origin + i * self.width
        return f"[{lo:g},{lo + self.width:g})"


@dataclass
class PartitionProbabilityTable:
    durations: list[float]
    probs: np.ndarray  # (len(durations), n_partitions)
    n_total: int
    scheme: PartitionScheme = field(default_factory=PartitionScheme)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float).reshape(len(self.durations), -1)
        if self.probs.shape[1] != self.scheme.n_partitions:
            raise ValueError("probability table width does not match the partition scheme")
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if np.any(self.probs.sum(axis=1) > 1 + 1e-12):
            raise ValueError("partition probabilities of one duration sum above 1")

    def row(self, duration: float) -> np.ndarray:
        for d, r in zip(self.durations, self.probs):
            if abs(d - duration) <= 1e-9:
                return r.copy()
        raise KeyError(f"duration {duration} not in table {self.durations}")

    def long_rows(self):
        for d, r in zip(self.durations, self.probs):
            for lo, p in zip(self.scheme.lows, r):
                yield {"duration": d, "partition_low": float(lo), "prob": float(p)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["duration"] + [f"{lo:g}" for lo in self.scheme.lows] + ["n_total"])
        for d, r in zip(self.durations, self.probs):
            w.writerow([repr(float(d))] + [repr(float(p)) for p in r] + [self.n_total])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, width: float | None = None) -> "PartitionProbabilityTable":
        rows = list(csv.reader(io.StringIO(text)))
        if len(rows) < 2:
            raise EmptyInput("probability table has no rows")
        lows = [float(v) for v in rows[0][1:-1]]
        if width is None:
            width = lows[1] - lows[0] if len(lows) > 1 else 25.0
        scheme = PartitionScheme(len(lows), width, lows[0])
        durations = [float(r[0]) for r in rows[1:]]
        probs = [[float(v) for v in r[1:-1]] for r in rows[1:]]
        return cls(durations, np.array(probs), int(rows[1][-1]), scheme)

    def to_dict(self) -> dict:
        return {
            "durations": [float(d) for d in self.durations],
            "partition_lows": [float(v) for v in self.scheme.lows],
            "width": self.scheme.width,
            "probs": self.probs.tolist(),
            "n_total": self.n_total,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionProbabilityTable":
        lows = d["partition_lows"]
        scheme = PartitionScheme(len(lows), float(d.get("width", 25.0)), float(lows[0]))
        return cls([float(v) for v in d["durations"]], np.array(d["probs"], dtype=float),
                   int(d["n_total"]), scheme)

    @classmethod
    def from_json(cls, path) -> "PartitionProbabilityTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class RiskBudget:
    lam: float = 6.8e-7
    p_c_given_e: float = 1.0
    p_s_given_c: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        for p in (self.p_c_given_e, self.p_s_given_c):
            if not (0 < p <= 1):
                raise ZeroProbability("conditional probabilities must lie in (0, 1]")

    @property
    def lambda_prime(self) -> float:
        return equivalent_risk(self.lam, self.p_c_given_e, self.p_s_given_c)


def equivalent_risk(lam: float, p_c: float, p_s: float) -> float:
    """Acceptable rate of hazardous events given collision and severity probabilities."""
    for p in (p_c, p_s):
        if not (0 < p <= 1):
            raise ZeroProbability(f"probability {p} outside (0, 1]")
    return lam / (p_c * p_s)


@dataclass(frozen=True)
class RelevanceOutcome:
    relevant: bool
    d_a_at_onset: float
    delta_v: float = 0.0


def _front_braking(s0, v0, decel, n, dt):
    t = np.arange(n) * dt
    tb = np.minimum(t, v0 / decel) if decel > 0 else t
    return s0 + v0 * tb - 0.5 * decel * tb * tb, np.maximum(v0 - decel * tb, 0.0)


def inject_fn_and_simulate(fs: FollowingScenario, ts: TrackSet, duration: float,
                           params: RssParams | None = None, dt: float = 0.01,
                           front: str = "brake", horizon: float | None = None) -> RelevanceOutcome:
    """Blind the rear vehicle for ``duration`` s, then let RSS respond.

    ``front="brake"``: the leader brakes at ``a_max_brake`` from onset
    (the RSS worst case). ``front="replay"``: it follows its recording.
    """
    p = params or RssParams()
    if duration < 0:
        raise ValueError("duration must be >= 0")
    if front not in FRONT_MODES:
        raise ConfigError(f"front mode must be one of {FRONT_MODES}")
    if fs.rear_id not in ts or fs.front_id not in ts:
        raise DanglingReference(fs.rear_id if fs.rear_id not in ts else fs.front_id)
    inp = replay_input(fs, ts, dt)
    gap0 = float(inp.x_obj[0] - inp.x_ego0)
    if front == "brake":
        if horizon is None:
            v_resp = inp.v_ego0 + p.a_max_accel * p.rho
            horizon = duration + p.rho + p.a_min_brake / p.j_max + v_resp / p.a_min_brake + 1.0
        n = int(math.ceil(horizon / dt)) + 1
        s_f, v_f = _front_braking(float(inp.x_obj[0]), float(inp.v_obj[0]), p.a_max_brake, n, dt)
    else:
        s_f, v_f = inp.x_obj, inp.v_obj
    collided, dv, _ = kernels.rss_follow_sim(
        s_f, v_f, inp.x_ego0, inp.v_ego0, int(round(duration / dt)), dt,
        p.rho, p.a_max_accel, p.a_min_brake, p.a_max_brake, p.j_max, p.a_max * G)
    return RelevanceOutcome(bool(collided), gap0, float(dv))


def relevance_matrix(pairs, ts: TrackSet, durations, params: RssParams | None = None,
                     dt: float = 0.01, front: str = "brake") -> tuple[np.ndarray, np.ndarray]:
    """Boolean (durations x pairs) relevance and the onset gap of each pair."""
    pairs = list(pairs)
    rel = np.zeros((len(durations), len(pairs)), dtype=bool)
    gaps = np.zeros(len(pairs))
    for j, fs in enumerate(pairs):
        for i, d in enumerate(durations):
            out = inject_fn_and_simulate(fs, ts, float(d), params, dt, front)
            rel[i, j] = out.relevant
            gaps[j] = out.d_a_at_onset
    return rel, gaps


def partition_probabilities(pairs, ts: TrackSet, durations, scheme: PartitionScheme | None = None,
                            params: RssParams | None = None, dt: float = 0.01,
                            front: str = "brake") -> PartitionProbabilityTable:
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("no following scenarios to evaluate")
    durations = [float(d) for d in durations]
    if not durations:
        raise EmptyInput("no FN durations given")
    scheme = scheme or PartitionScheme()
    rel, gaps = relevance_matrix(pairs, ts, durations, params, dt, front)
    probs = np.zeros((len(durations), scheme.n_partitions))
    part = [scheme.index(g) for g in gaps]
    for k in range(scheme.n_partitions):
        cols = [j for j, pk in enumerate(part) if pk == k]
        if cols:
            probs[:, k] = rel[:, cols].sum(axis=1)
    probs /= len(pairs)
    return PartitionProbabilityTable(durations, probs, len(pairs), scheme)
