"""Synthetic highway recordings in the highD layout.

Used as test fixtures and as the default input of the CLI pipeline.
One carriageway is generated, driving towards +x, with lanes 2..4 bounded
by markings at 0, 3.75, 7.5 and 11.25 m.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trajectory import RecordingMeta, Track, TrackSet, VehicleClass

LANE_WIDTH = 3.75
MARKINGS = (0.0, 3.75, 7.5, 11.25)


def highway_meta(frame_rate: float = 25.0, duration: float = 0.0, rec_id: str = "syn") -> RecordingMeta:
    return RecordingMeta(frame_rate=frame_rate, lane_marking_ys=MARKINGS,
                         duration=duration, id=rec_id)


def make_track(vid: int, meta: RecordingMeta, frame0: int, x, y, vx, vy,
               length: float = 4.5, width: float = 1.8,
               vclass: VehicleClass = VehicleClass.CAR) -> Track:
    """Build a Track from per-frame center positions and velocities."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    y = np.broadcast_to(np.asarray(y, dtype=float), (n,)).copy()
    vx = np.broadcast_to(np.asarray(vx, dtype=float), (n,)).copy()
    vy = np.broadcast_to(np.asarray(vy, dtype=float), (n,)).copy()
    if n > 1:
        ax = np.gradient(vx) * meta.frame_rate
        ay = np.gradient(vy) * meta.frame_rate
    else:
        ax = np.zeros(1)
        ay = np.zeros(1)
    lanes = np.array([meta.lane_of(v) for v in y], dtype=np.int64)
    return Track(
        vehicle_id=int(vid), vclass=VehicleClass(vclass),
        frames=np.arange(frame0, frame0 + n, dtype=np.int64),
        x=x, y=y, width=np.full(n, float(length)), height=np.full(n, float(width)),
        vx=vx, vy=vy, ax=ax, ay=ay, lane_id=lanes,
    )


def speed_profile(v0: float, n: int, dt: float, changes=()) -> tuple[np.ndarray, np.ndarray]:
    """Positions (from 0) and speeds for piecewise-constant acceleration.

    ``changes`` holds ``(frame_index, accel, v_target)`` triples: from that
    frame on, accelerate at ``accel`` until ``v_target`` is reached.
    """
    v = np.empty(n)
    x = np.empty(n)
    v[0], x[0] = v0, 0.0
    plan = sorted(changes)
    a, target, j = 0.0, v0, 0
    for k in range(1, n):
        while j < len(plan) and plan[j][0] <= k - 1:
            _, a, target = plan[j]
            j += 1
        vp = v[k - 1]
        vn = vp + a * dt
        if (a > 0 and vn > target) or (a < 0 and vn < target):
            vn = target
        vn = max(vn, 0.0)
        v[k] = vn
        x[k] = x[k - 1] + 0.5 * (vp + vn) * dt
    return x, v


def lateral_profile(y0: float, y1: float, n: int, start: int, vy: float, dt: float):
    """Lateral positions moving from y0 to y1 at |vy| from frame index ``start``."""
    sign = 1.0 if y1 >= y0 else -1.0
    t = np.clip((np.arange(n) - start) * dt, 0.0, None)
    y = y0 + sign * np.minimum(abs(vy) * t, abs(y1 - y0))
    moving = (np.arange(n) >= start) & (np.abs(y - y0) < abs(y1 - y0))
    vel = np.where(moving, sign * abs(vy), 0.0)
    return y, vel


@dataclass(frozen=True)
class CutInSpec:
    """One cut-in: the object moves from ``origin_lane`` into the ego's lane.

    ``gap`` is the bumper gap at T1, when the object's leading edge reaches
    the lane marking.
    """

    v_ego: float
    v_cut: float
    gap: float
    origin_lane: int = 2
    target_lane: int = 3
    vy: float = 1.0
    lead_s: float = 2.0
    duration: float = 12.0
    ego_brake: float | None = None  # recorded ego response, m/s^2
    ego_react_s: float = 0.3


def cutin_tracks(spec: CutInSpec, meta: RecordingMeta, ego_id: int, cut_id: int,
                 frame0: int = 0, x0: float = 0.0) -> list[Track]:
    dt = meta.dt
    n = int(round(spec.duration * meta.frame_rate)) + 1
    start = int(round(spec.lead_s * meta.frame_rate))
    y_from, y_to = meta.lane_center(spec.origin_lane), meta.lane_center(spec.target_lane)
    y_c, vy_c = lateral_profile(y_from, y_to, n, start, spec.vy, dt)
    xc, vc = speed_profile(spec.v_cut, n, dt)
    width = 1.8
    side = 1.0 if y_to > y_from else -1.0
    mark = 0.5 * (y_from + y_to)
    k1 = int(np.argmax(side * (y_c + side * width / 2 - mark) >= 0))
    changes = ()
    if spec.ego_brake:
        # the recorded human reacts shortly after the object's edge reaches the marking
        react = k1 + int(round(spec.ego_react_s * meta.frame_rate))
        changes = ((react, -abs(spec.ego_brake), min(spec.v_cut, spec.v_ego)),)
    xe, ve = speed_profile(spec.v_ego, n, dt, changes)
    length = 4.5
    off = (xe[k1] + length) + spec.gap - xc[k1]
    ego = make_track(ego_id, meta, frame0, x0 + xe, y_to, ve, 0.0, length=length)
    cut = make_track(cut_id, meta, frame0, x0 + xc + off, y_c, vc, vy_c, length=length)
    return [ego, cut]


def cutin_fixture(spec: CutInSpec, frame_rate: float = 25.0) -> TrackSet:
    meta = highway_meta(frame_rate, duration=spec.duration)
    return TrackSet(meta, {t.vehicle_id: t for t in cutin_tracks(spec, meta, 1, 2)})


CC_COLLISION_SPEC = CutInSpec(v_ego=30.0, v_cut=20.0, gap=19.7, vy=1.2, ego_brake=8.0)


def cc_collision_fixture(frame_rate: float = 25.0) -> TrackSet:
    """Fast ego, slower late cut-in: CC Driver collides, FSM and RSS do not."""
    return cutin_fixture(CC_COLLISION_SPEC, frame_rate)


SAFE_CUTIN_SPECS = (
    CutInSpec(v_ego=30.0, v_cut=22.0, gap=45.0, vy=1.0),
    CutInSpec(v_ego=28.0, v_cut=24.0, gap=30.0, vy=0.8, origin_lane=4),
    CutInSpec(v_ego=33.0, v_cut=27.0, gap=40.0, vy=1.1),
    CutInSpec(v_ego=25.0, v_cut=20.0, gap=28.0, vy=0.9, origin_lane=4),
    CutInSpec(v_ego=36.0, v_cut=30.0, gap=38.0, vy=1.3),
)


def suite_trackset(specs, frame_rate: float = 25.0, spacing_s: float = 1.0) -> TrackSet:
    """Several cut-ins laid out one after another in time."""
    meta = highway_meta(frame_rate)
    tracks: dict[int, Track] = {}
    frame = 0
    for i, spec in enumerate(specs):
        for t in cutin_tracks(spec, meta, 2 * i + 1, 2 * i + 2, frame0=frame):
            tracks[t.vehicle_id] = t
        frame += int(round((spec.duration + spacing_s) * frame_rate)) + 1
    meta = highway_meta(frame_rate, duration=frame / frame_rate)
    return TrackSet(meta, tracks)


def generate_recording(seed: int = 0, n_slots: int = 30, slot_s: float = 12.0,
                       frame_rate: float = 25.0, truck_share: float = 0.15,
                       include_cc_collision: bool = True, safe_cutins: bool = True) -> TrackSet:
    """Random following pairs per lane plus scripted cut-ins.

    Each lane holds at most one pair at a time; slots follow each other
    with a one-second pause so that episodes never interact.
    """
    rng = np.random.default_rng(seed)
    meta = highway_meta(frame_rate)
    dt = meta.dt
    n = int(round(slot_s * frame_rate)) + 1
    pause = int(round(frame_rate))
    specs = list(SAFE_CUTIN_SPECS if safe_cutins else ())
    if include_cc_collision:
        specs.append(CC_COLLISION_SPEC)
    # cut-ins take over lane-3 slots spread over the recording
    cut_slots = {}
    if specs:
        picks = np.linspace(1, max(n_slots - 2, 1), len(specs)).round().astype(int)
        cut_slots = {int(p): s for p, s in zip(picks, specs)}
    tracks: dict[int, Track] = {}
    vid = 1
    for slot in range(n_slots):
        frame0 = slot * (n + pause)
        for lane in (2, 3, 4):
            if lane == 3 and slot in cut_slots:
                spec = cut_slots[slot]
                spec = CutInSpec(**{**spec.__dict__, "duration": slot_s})
                for t in cutin_tracks(spec, meta, vid, vid + 1, frame0=frame0):
                    tracks[t.vehicle_id] = t
                vid += 2
                continue
            if slot in cut_slots and lane == cut_slots[slot].origin_lane:
                continue
            v_f = float(rng.uniform(20.0, 36.0))
            gap = float(min(5.0 + rng.gamma(3.0, 15.0), 200.0))
            # bounded closing speed keeps the recorded gap positive
            dv_hi = min(2.0, 0.8 * gap / slot_s)
            v_r = max(float(v_f + rng.uniform(-2.0, dv_hi)), 1.0)
            rear_cls = VehicleClass.TRUCK if rng.random() < truck_share else VehicleClass.CAR
            l_r = 12.0 if rear_cls is VehicleClass.TRUCK else 4.5
            xr, vr = speed_profile(v_r, n, dt)
            xf, vf = speed_profile(v_f, n, dt)
            y = meta.lane_center(lane) + float(rng.uniform(-0.2, 0.2))
            x0 = float(rng.uniform(0.0, 50.0))
            rear = make_track(vid, meta, frame0, x0 + xr, y, vr, 0.0,
                              length=l_r, width=2.5 if rear_cls is VehicleClass.TRUCK else 1.8,
                              vclass=rear_cls)
            front = make_track(vid + 1, meta, frame0, x0 + xf + l_r / 2 + gap + 2.25, y, vf, 0.0)
            tracks[rear.vehicle_id] = rear
            tracks[front.vehicle_id] = front
            vid += 2
    duration = n_slots * (n + pause) / frame_rate
    return TrackSet(highway_meta(frame_rate, duration=duration), tracks)


def hand_cutin(vy: float = 0.5, frame_rate: float = 25.0, height: float = 1.8,
               n_before: int = 0, n_after: int = 40, y0: float | None = None,
               direction: int = 1, heading: int = 1, speed: float = 25.0) -> TrackSet:
    """Single lane change with constant lateral speed, for hand-checked key frames.

    The mover starts in the middle of its lane and moves ``direction`` (+1
    towards larger y) into the neighbouring lane; an ego sits behind it in
    the target lane.
    """
    meta = highway_meta(frame_rate)
    origin = 3
    target = origin + direction
    c0 = meta.lane_center(origin) if y0 is None else y0
    c1 = meta.lane_center(target)
    travel = abs(c1 - c0)
    n_move = int(math.ceil(travel / (abs(vy) / frame_rate)))
    n = n_before + n_move + n_after + 1
    y, vyv = lateral_profile(c0, c1, n, n_before, vy, 1.0 / frame_rate)
    x = heading * (100.0 + speed * np.arange(n) / frame_rate)
    vx = np.full(n, heading * speed)
    mover = make_track(2, meta, 0, x, y, vx, vyv, width=height)
    ego = make_track(1, meta, 0, x - heading * 30.0, c1, vx, 0.0)
    return TrackSet(meta, {1: ego, 2: mover})
