"""Cut-in and car-following episodes mined from a TrackSet.

Coordinates follow highD: x is longitudinal, y lateral and pointing down
the image, so for a vehicle driving towards +x its right-hand side is +y.
All longitudinal quantities below are measured along each vehicle's own
heading (``Track.heading``).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DanglingReference, NonPositiveGap
from .trajectory import Track, TrackSet, VehicleClass


class CutInDirection(str, enum.Enum):
    LEFT_TO_RIGHT = "LeftToRight"
    RIGHT_TO_LEFT = "RightToLeft"


@dataclass(frozen=True)
class WanderingZone:
    half_width: float = 0.375

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("wandering zone half width must be positive")


@dataclass(frozen=True)
class CutInScenario:
    ego_id: int | None
    cutin_id: int
    t0: int
    t1: int
    t2: int
    t3: int
    t4: int
    direction: CutInDirection
    min_ttc: float
    origin_lane: int = 0
    target_lane: int = 0

    def __post_init__(self):
        if not (self.t0 <= self.t1 <= self.t2 <= self.t3 <= self.t4):
            raise ValueError(f"cut-in timestamps out of order: {self.timestamps}")
        if self.ego_id is not None and self.ego_id == self.cutin_id:
            raise ValueError("ego and cut-in vehicle must differ")
        if not self.min_ttc > 0:
            raise ValueError("min_ttc must be positive")

    @property
    def timestamps(self) -> tuple[int, int, int, int, int]:
        return (self.t0, self.t1, self.t2, self.t3, self.t4)

    @property
    def key(self) -> str:
        return f"cutin:{self.cutin_id}->{self.ego_id}@{self.t0}"

    def to_dict(self) -> dict:
        return {
            "ego_id": self.ego_id, "cutin_id": self.cutin_id,
            "t0": self.t0, "t1": self.t1, "t2": self.t2, "t3": self.t3, "t4": self.t4,
            "direction": self.direction.value,
            "min_ttc": None if math.isinf(self.min_ttc) else self.min_ttc,
            "origin_lane": self.origin_lane, "target_lane": self.target_lane,
        }

    @classmethod
    def from_dict(cls, d) -> "CutInScenario":
        ttc = d.get("min_ttc")
        return cls(
            ego_id=d.get("ego_id"), cutin_id=int(d["cutin_id"]),
            t0=int(d["t0"]), t1=int(d["t1"]), t2=int(d["t2"]), t3=int(d["t3"]), t4=int(d["t4"]),
            direction=CutInDirection(d["direction"]),
            min_ttc=math.inf if ttc is None else float(ttc),
            origin_lane=int(d.get("origin_lane", 0)), target_lane=int(d.get("target_lane", 0)),
        )


@dataclass(frozen=True)
class FollowingScenario:
    rear_id: int
    front_id: int
    frame_span: tuple[int, int]
    initial_state: tuple[float, float, float]  # (v_rear, v_front, gap)
    rear_class: VehicleClass = VehicleClass.CAR
    lane_id: int = 0

    def __post_init__(self):
        if not self.frame_span[1] > self.frame_span[0]:
            raise ValueError("following span must have end > start")
        if not self.initial_state[2] > 0:
            raise ValueError("following gap must be positive")

    @property
    def key(self) -> str:
        return f"follow:{self.rear_id}->{self.front_id}@{self.frame_span[0]}"

    def to_dict(self) -> dict:
        v_r, v_f, gap = self.initial_state
        return {
            "rear_id": self.rear_id, "front_id": self.front_id,
            "start": self.frame_span[0], "end": self.frame_span[1],
            "v_rear": v_r, "v_front": v_f, "gap": gap,
            "rear_class": self.rear_class.value, "lane_id": self.lane_id,
        }


def compute_ttc(gap: float, v_rear: float, v_front: float) -> float:
    """Longitudinal time to collision; +inf when the gap is not closing."""
    if not gap > 0:
        raise NonPositiveGap(f"gap must be positive, got {gap}")
    closing = v_rear - v_front
    if closing <= 0:
        return math.inf
    return gap / closing


def bumper_gap(rear: Track, i_rear: int, front: Track, i_front: int) -> float:
    """Front bumper of ``rear`` to rear bumper of ``front``, along rear's heading."""
    h = rear.heading
    return (h * (front.x[i_front] - rear.x[i_rear])
            - 0.5 * (front.width[i_front] + rear.width[i_rear]))


def _first(mask: np.ndarray, start: int, stop: int) -> int | None:
    """First index k in [start, stop] with mask[k]; None if absent."""
    if stop < start:
        return None
    hits = np.flatnonzero(mask[start:stop + 1])
    return int(start + hits[0]) if len(hits) else None


def _find_ego(ts: TrackSet, cutin: Track, frame: int, lane: int, max_range: float):
    i_c = cutin.index_of(frame)
    h = cutin.heading
    best, best_d = None, math.inf
    for other in ts:
        if other.vehicle_id == cutin.vehicle_id or not other.has_frame(frame):
            continue
        if other.heading != h:
            continue
        i_o = other.index_of(frame)
        if int(other.lane_id[i_o]) != lane:
            continue
        ahead = h * (cutin.x[i_c] - other.x[i_o])
        if ahead <= 0:
            continue
        gap = ahead - 0.5 * (cutin.width[i_c] + other.width[i_o])
        if gap > max_range:
            continue
        if ahead < best_d or (ahead == best_d and other.vehicle_id < best.vehicle_id):
            best, best_d = other, ahead
    return best


def episode_min_ttc(ts: TrackSet, ego_id: int, front_id: int, start: int, end: int) -> float:
    """Minimum longitudinal TTC over frames [start, end] where both vehicles exist.

    Frames with a non-positive bumper gap (longitudinal overlap while still
    in the adjacent lane) carry no TTC and are skipped.
    """
    ego, front = ts[ego_id], ts[front_id]
    lo = max(start, ego.first_frame, front.first_frame)
    hi = min(end, ego.last_frame, front.last_frame)
    best = math.inf
    h = ego.heading
    for f in range(lo, hi + 1):
        ie, i_f = ego.index_of(f), front.index_of(f)
        gap = bumper_gap(ego, ie, front, i_f)
        if gap <= 0:
            continue
        best = min(best, compute_ttc(gap, h * ego.vx[ie], h * front.vx[i_f]))
    return best


def detect_cutins(ts: TrackSet, wz: WanderingZone | None = None,
                  ego_range: float = 200.0) -> list[CutInScenario]:
    """Find lane changes and stamp them with the T0..T4 key frames.

    T0: last frame inside the origin lane's wandering zone before the move.
    T1: first frame the leading-side tire corner is on/over the marking.
    T2: first frame the box center is on/over the marking.
    T3: first frame the trailing-side tire corner is on/over the marking.
    T4: first frame back inside the target lane's wandering zone.
    The "first frame at or beyond" rule is the frame that contains the
    linearly interpolated sub-frame crossing instant.
    """
    wz = wz or WanderingZone()
    meta = ts.meta
    out: list[CutInScenario] = []
    for t in ts:
        lanes = t.lane_id
        changes = np.flatnonzero(lanes[1:] != lanes[:-1]) + 1
        for n, i in enumerate(changes):
            a, b = int(lanes[i - 1]), int(lanes[i])
            if abs(a - b) != 1 or not (meta.has_lane(a) and meta.has_lane(b)):
                continue
            lo = int(changes[n - 1]) if n > 0 else 0
            hi = int(changes[n + 1]) - 1 if n + 1 < len(changes) else len(t) - 1
            s = 1 if b > a else -1
            mark = meta.lane_bounds(a)[1] if s > 0 else meta.lane_bounds(a)[0]
            y, half_h = t.y, t.height / 2.0
            k2 = _first(s * (y - mark) >= 0, lo, hi)
            if k2 is None:
                continue
            k1 = _first(s * (y + s * half_h - mark) >= 0, lo, k2)
            k3 = _first(s * (y - s * half_h - mark) >= 0, k2, hi)
            if k1 is None or k3 is None:
                continue
            c_a = meta.lane_center(a)
            k0 = None
            for k in range(k1, lo - 1, -1):
                if s * (y[k] - c_a) <= wz.half_width:
                    k0 = k
                    break
            k4 = _first(np.abs(y - meta.lane_center(b)) <= wz.half_width, k3, hi)
            if k0 is None or k4 is None:
                continue
            frames = t.frames
            t2 = int(frames[k2])
            ego = _find_ego(ts, t, t2, b, ego_range)
            ego_id = None if ego is None else ego.vehicle_id
            ttc = math.inf
            if ego is not None:
                ttc = episode_min_ttc(ts, ego_id, t.vehicle_id, int(frames[k0]), int(frames[k4]))
            direction = (CutInDirection.LEFT_TO_RIGHT if s * t.heading > 0
                         else CutInDirection.RIGHT_TO_LEFT)
            out.append(CutInScenario(
                ego_id=ego_id, cutin_id=t.vehicle_id,
                t0=int(frames[k0]), t1=int(frames[k1]), t2=t2,
                t3=int(frames[k3]), t4=int(frames[k4]),
                direction=direction, min_ttc=ttc, origin_lane=a, target_lane=b,
            ))
    out.sort(key=lambda c: (c.ego_id is None, c.ego_id or 0, c.t0, c.cutin_id))
    return out


def filter_cutins(scs, ts: TrackSet, ttc_threshold: float = 5.0,
                  car_only: bool = True) -> list[CutInScenario]:
    """Keep relevant cut-ins: an ego exists, min TTC <= threshold, (cars only)."""
    kept = []
    for sc in scs:
        for vid in (sc.cutin_id, sc.ego_id):
            if vid is not None and vid not in ts:
                raise DanglingReference(vid)
        if sc.ego_id is None:
            continue
        if sc.min_ttc > ttc_threshold:
            continue
        if car_only and (ts[sc.cutin_id].vclass != VehicleClass.CAR
                         or ts[sc.ego_id].vclass != VehicleClass.CAR):
            continue
        kept.append(sc)
    return kept


def extract_following_pairs(ts: TrackSet, min_duration: float) -> list[FollowingScenario]:
    """Lane-keeping (rear, directly-ahead front) intervals of at least ``min_duration`` s."""
    rows = []
    for t in ts:
        h = t.heading
        rows.append(pd.DataFrame({
            "frame": t.frames, "id": t.vehicle_id, "lane": t.lane_id, "dir": h,
            "s": h * t.x, "half_len": t.width / 2.0, "v": h * t.vx,
        }))
    if not rows:
        return []
    df = pd.concat(rows, ignore_index=True)
    df = df.sort_values(["frame", "lane", "dir", "s", "id"], kind="stable").reset_index(drop=True)
    grp = df.groupby(["frame", "lane", "dir"], sort=False)
    df["front"] = grp["id"].shift(-1)
    df["front_s"] = grp["s"].shift(-1)
    df["front_half"] = grp["half_len"].shift(-1)
    df["front_v"] = grp["v"].shift(-1)
    df = df.dropna(subset=["front"]).copy()
    df["front"] = df["front"].astype(np.int64)
    df["gap"] = (df["front_s"] - df["front_half"]) - (df["s"] + df["half_len"])
    df = df[df["gap"] > 0]
    df = df.sort_values(["id", "front", "frame"], kind="stable").reset_index(drop=True)
    if df.empty:
        return []
    rid = df["id"].to_numpy()
    fid = df["front"].to_numpy()
    fr = df["frame"].to_numpy()
    ln = df["lane"].to_numpy()
    new_run = np.r_[True, (rid[1:] != rid[:-1]) | (fid[1:] != fid[:-1])
                    | (fr[1:] != fr[:-1] + 1) | (ln[1:] != ln[:-1])]
    starts = np.flatnonzero(new_run)
    ends = np.r_[starts[1:], len(df)] - 1
    fps = ts.meta.frame_rate
    out = []
    for s, e in zip(starts, ends):
        if (fr[e] - fr[s]) / fps < min_duration or fr[e] <= fr[s]:
            continue
        r = df.iloc[s]
        out.append(FollowingScenario(
            rear_id=int(rid[s]), front_id=int(fid[s]),
            frame_span=(int(fr[s]), int(fr[e])),
            initial_state=(float(r["v"]), float(r["front_v"]), float(r["gap"])),
            rear_class=ts[int(rid[s])].vclass, lane_id=int(ln[s]),
        ))
    out.sort(key=lambda f: (f.rear_id, f.frame_span[0], f.front_id))
    return out


def group_by_rear_class(pairs) -> dict[VehicleClass, list[FollowingScenario]]:
    out: dict[VehicleClass, list[FollowingScenario]] = {}
    for p in pairs:
        out.setdefault(p.rear_class, []).append(p)
    return out
