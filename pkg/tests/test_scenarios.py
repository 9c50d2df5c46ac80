from __future__ import annotations

import math

import numpy as np
import pytest

from sotifreq.errors import DanglingReference, NonPositiveGap
from sotifreq.scenarios import (CutInDirection, CutInScenario, WanderingZone, compute_ttc, detect_cutins,
                                extract_following_pairs, filter_cutins, group_by_rear_class)
from sotifreq.traffic import generate_recording, hand_cutin, highway_meta, make_track, speed_profile
from sotifreq.trajectory import TrackSet, VehicleClass

# (kwargs of hand_cutin, hand-computed (T0, T1, T2, T3, T4), direction)
# The mover starts at y0 (lane-3 center 5.625 by default) and moves vy/fps per
# frame; lane markings at 3.75 and 7.5, half-height h/2, wandering zone 0.375.
# T0: last frame with offset <= 0.375; T1: offset >= 1.875 - h/2; T2: >= 1.875;
# T3: >= 1.875 + h/2; T4: >= 3.75 - 0.375, each rounded up to a whole frame.
L2R, R2L = CutInDirection.LEFT_TO_RIGHT, CutInDirection.RIGHT_TO_LEFT
FIXTURES = [
    (dict(vy=0.5), (18, 49, 94, 139, 169), L2R),                     # 0.02 m/frame
    (dict(vy=1.0), (9, 25, 47, 70, 85), L2R),                        # 0.04 m/frame
    (dict(vy=0.5, n_before=10), (28, 59, 104, 149, 179), L2R),       # shifted start
    (dict(vy=0.5, direction=-1), (18, 49, 94, 139, 169), R2L),       # towards lane 2
    (dict(vy=0.5, heading=-1), (18, 49, 94, 139, 169), R2L),         # driving towards -x
    (dict(vy=0.5, height=2.4), (18, 34, 94, 154, 169), L2R),         # wider vehicle
    (dict(vy=0.5, frame_rate=10.0), (7, 20, 38, 56, 68), L2R),       # 0.05 m/frame
    (dict(vy=0.5, y0=5.81), (9, 40, 85, 130, 160), L2R),             # off-center start
    (dict(vy=0.7), (13, 35, 67, 100, 121), L2R),                     # 0.028 m/frame
    (dict(vy=0.9, frame_rate=30.0), (12, 33, 63, 93, 113), L2R),     # 0.03 m/frame
]


@pytest.mark.parametrize("kwargs,expected,direction", FIXTURES)
def test_cutin_keyframes_match_hand_computation(kwargs, expected, direction):
    ts = hand_cutin(**kwargs)
    scs = [s for s in detect_cutins(ts) if s.cutin_id == 2]
    assert len(scs) == 1
    sc = scs[0]
    assert sc.timestamps == expected
    assert sc.direction is direction
    assert sc.ego_id == 1
    assert sc.origin_lane == 3
    assert sc.target_lane == 3 + kwargs.get("direction", 1)


def test_constant_speeds_give_infinite_ttc():
    sc = detect_cutins(hand_cutin(vy=0.5))[0]
    assert math.isinf(sc.min_ttc)


def test_wandering_zone_width_moves_t0_and_t4():
    narrow = detect_cutins(hand_cutin(vy=0.5), WanderingZone(0.125))[0]
    # offset <= 0.125 -> 6.25 frames; offset >= 3.625 -> 181.25 frames
    assert (narrow.t0, narrow.t4) == (6, 182)
    with pytest.raises(ValueError):
        WanderingZone(0.0)


def test_compute_ttc():
    assert compute_ttc(30.0, 25.0, 20.0) == pytest.approx(6.0)
    assert math.isinf(compute_ttc(30.0, 20.0, 25.0))
    assert math.isinf(compute_ttc(30.0, 20.0, 20.0))
    with pytest.raises(NonPositiveGap):
        compute_ttc(0.0, 25.0, 20.0)


def _sc(ego, cut, ttc):
    return CutInScenario(ego, cut, 0, 1, 2, 3, 4, L2R, ttc)


def _pair_ts(cls_cut=VehicleClass.CAR):
    meta = highway_meta()
    a = make_track(1, meta, 0, np.arange(5.0), 5.6, 1.0, 0.0)
    b = make_track(2, meta, 0, 10 + np.arange(5.0), 5.6, 1.0, 0.0, vclass=cls_cut)
    return TrackSet(meta, {1: a, 2: b})


def test_filter_cutins_rules():
    ts = _pair_ts()
    kept = filter_cutins([_sc(1, 2, 3.0), _sc(1, 2, 7.0), _sc(None, 2, math.inf)], ts)
    assert [s.min_ttc for s in kept] == [3.0]
    assert filter_cutins([_sc(1, 2, 5.0)], ts, ttc_threshold=5.0)
    truck = _pair_ts(VehicleClass.TRUCK)
    assert filter_cutins([_sc(1, 2, 3.0)], truck) == []
    assert len(filter_cutins([_sc(1, 2, 3.0)], truck, car_only=False)) == 1
    with pytest.raises(DanglingReference):
        filter_cutins([_sc(1, 9, 3.0)], ts)


def test_scenario_validation_and_roundtrip():
    with pytest.raises(ValueError):
        CutInScenario(1, 2, 5, 4, 6, 7, 8, L2R, 1.0)
    with pytest.raises(ValueError):
        CutInScenario(2, 2, 0, 1, 2, 3, 4, L2R, 1.0)
    sc = _sc(1, 2, math.inf)
    assert CutInScenario.from_dict(sc.to_dict()) == sc


def test_following_pair_extraction():
    meta = highway_meta(25.0)
    n = 151  # 6 s
    xr, vr = speed_profile(25.0, n, meta.dt)
    xf, vf = speed_profile(24.0, n, meta.dt)
    rear = make_track(1, meta, 0, xr, 5.625, vr, 0.0)
    front = make_track(2, meta, 0, xf + 44.5, 5.625, vf, 0.0)
    other = make_track(3, meta, 0, xr, 9.375, vr, 0.0)
    ts = TrackSet(meta, {1: rear, 2: front, 3: other})
    pairs = extract_following_pairs(ts, 5.0)
    assert len(pairs) == 1
    p = pairs[0]
    assert (p.rear_id, p.front_id, p.frame_span, p.lane_id) == (1, 2, (0, 150), 3)
    assert p.initial_state == pytest.approx((25.0, 24.0, 40.0))
    assert extract_following_pairs(ts, 6.5) == []


def test_following_pairs_on_recording_are_sane():
    ts = generate_recording(seed=0, n_slots=6)
    pairs = extract_following_pairs(ts, 5.0)
    assert pairs
    assert all(p.initial_state[2] > 0 for p in pairs)
    groups = group_by_rear_class(pairs)
    assert sum(len(v) for v in groups.values()) == len(pairs)


def test_recording_cutins_include_collision_fixture():
    ts = generate_recording(seed=0)
    scs = filter_cutins(detect_cutins(ts), ts)
    assert scs
    assert all(s.min_ttc <= 5.0 for s in scs)
