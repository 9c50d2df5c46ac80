from __future__ import annotations

import numpy as np
import pytest

from sotifreq import KMH
from sotifreq.errors import (DuplicateFrame, EmptyFile, MalformedNumber, MissingColumn,
                             NonContiguousFrames)
from sotifreq.traffic import generate_recording
from sotifreq.trajectory import (RecordingMeta, VehicleClass, parse_meta, parse_tracks,
                                 validate_trackset, write_meta, write_tracks)

HEADER = "frame,id,x,y,width,height,xVelocity,yVelocity,xAcceleration,yAcceleration,laneId"


def _meta_file(tmp_path, text="id,frameRate,duration,upperLaneMarkings,lowerLaneMarkings\n"
                              "7,25,10.0,,0.0;3.75;7.5;11.25\n"):
    p = tmp_path / "meta.csv"
    p.write_text(text)
    return p


def _tracks_file(tmp_path, rows, header=HEADER):
    p = tmp_path / "tracks.csv"
    p.write_text(header + "\n" + "\n".join(rows) + "\n")
    return p


def _row(frame, vid, x=10.0, y=5.0, vx=20.0, lane=3, cls=None):
    r = f"{frame},{vid},{x},{y},4.5,1.8,{vx},0.0,0.0,0.0,{lane}"
    return r if cls is None else r + f",{cls}"


def test_parse_meta_highd_layout(tmp_path):
    meta = parse_meta(_meta_file(tmp_path))
    assert meta.frame_rate == 25.0
    assert meta.lane_marking_ys == (0.0, 3.75, 7.5, 11.25)
    assert meta.id == "7"
    assert meta.lane_center(3) == pytest.approx(5.625)
    assert meta.lane_of(5.0) == 3 and meta.lane_of(8.0) == 4
    assert meta.has_lane(4) and not meta.has_lane(5)


def test_parse_meta_missing_frame_rate(tmp_path):
    with pytest.raises(MissingColumn):
        parse_meta(_meta_file(tmp_path, "id,laneMarkings\n1,0;3.75\n"))


def test_parse_meta_empty(tmp_path):
    p = tmp_path / "meta.csv"
    p.write_text("")
    with pytest.raises(EmptyFile):
        parse_meta(p)


def test_parse_tracks_basic(tmp_path):
    meta = parse_meta(_meta_file(tmp_path))
    rows = [_row(f, 1, x=10 + 0.8 * f) for f in range(5)] + [_row(f, 2, x=40 + 0.8 * f) for f in range(2, 6)]
    ts = parse_tracks(_tracks_file(tmp_path, rows), meta)
    assert len(ts) == 2
    t = ts[2]
    assert list(t.frames) == [2, 3, 4, 5]
    assert t.vclass is VehicleClass.CAR
    assert t.heading == 1
    assert t.first_frame == 2 and t.last_frame == 5


def test_parse_tracks_class_column_and_file(tmp_path):
    meta = parse_meta(_meta_file(tmp_path))
    rows = [_row(f, 1, cls="Truck") for f in range(3)]
    ts = parse_tracks(_tracks_file(tmp_path, rows, HEADER + ",class"), meta)
    assert ts[1].vclass is VehicleClass.TRUCK
    cls = tmp_path / "tracksMeta.csv"
    cls.write_text("id,class\n1,Car\n")
    ts = parse_tracks(_tracks_file(tmp_path, [_row(f, 1) for f in range(3)]), meta, class_path=cls)
    assert ts[1].vclass is VehicleClass.CAR


def test_parse_tracks_top_left_origin(tmp_path):
    meta = parse_meta(_meta_file(tmp_path))
    p = _tracks_file(tmp_path, [_row(0, 1, x=10.0, y=5.0)])
    ts = parse_tracks(p, meta, xy_origin="top_left")
    assert ts[1].x[0] == pytest.approx(12.25)
    assert ts[1].y[0] == pytest.approx(5.9)


def test_parse_tracks_kmh_alias(tmp_path):
    meta = parse_meta(_meta_file(tmp_path))
    header = HEADER.replace("xVelocity,yVelocity", "xVelocityKmh,yVelocityKmh")
    ts = parse_tracks(_tracks_file(tmp_path, [_row(0, 1, vx=72.0)], header), meta)
    assert ts[1].vx[0] == pytest.approx(72.0 * KMH)


def test_missing_column(tmp_path):
    meta = parse_meta(_meta_file(tmp_path))
    header = HEADER.replace(",laneId", "")
    rows = [r.rsplit(",", 1)[0] for r in [_row(0, 1)]]
    with pytest.raises(MissingColumn) as exc:
        parse_tracks(_tracks_file(tmp_path, rows, header), meta)
    assert exc.value.name == "laneId"


def test_non_contiguous_frames(tmp_path):
    meta = parse_meta(_meta_file(tmp_path))
    with pytest.raises(NonContiguousFrames) as exc:
        parse_tracks(_tracks_file(tmp_path, [_row(0, 1), _row(1, 1), _row(3, 1)]), meta)
    assert exc.value.vehicle_id == 1


def test_duplicate_frame(tmp_path):
    meta = parse_meta(_meta_file(tmp_path))
    with pytest.raises(DuplicateFrame):
        parse_tracks(_tracks_file(tmp_path, [_row(0, 1), _row(0, 1)]), meta)


def test_malformed_number(tmp_path):
    meta = parse_meta(_meta_file(tmp_path))
    rows = [_row(0, 1), "1,1,abc,5.0,4.5,1.8,20,0,0,0,3"]
    with pytest.raises(MalformedNumber) as exc:
        parse_tracks(_tracks_file(tmp_path, rows), meta)
    assert exc.value.col == "x" and exc.value.row == 1


def test_bad_origin(tmp_path):
    meta = parse_meta(_meta_file(tmp_path))
    with pytest.raises(ValueError):
        parse_tracks(_tracks_file(tmp_path, [_row(0, 1)]), meta, xy_origin="corner")


def test_round_trip_exact(tmp_path):
    ts = generate_recording(seed=3, n_slots=4)
    write_meta(ts.meta, tmp_path / "m.csv")
    write_tracks(ts, tmp_path / "t.csv")
    meta = parse_meta(tmp_path / "m.csv")
    back = parse_tracks(tmp_path / "t.csv", meta)
    assert meta == ts.meta
    assert set(back.tracks) == set(ts.tracks)
    for vid in ts.tracks:
        assert back[vid] == ts[vid]


def test_validation_flags_violations():
    ts = generate_recording(seed=1, n_slots=3)
    assert validate_trackset(ts).ok
    meta = RecordingMeta(25.0, (0.0, 3.75))
    from sotifreq.trajectory import Track, TrackSet

    n = 4
    bad = Track(vehicle_id=9, vclass=VehicleClass.CAR, frames=np.array([0, 1, 2, 4]),
                x=np.array([0.0, 1.0, 50.0, 51.0]), y=np.full(n, 1.0), width=np.array([4.5, 4.5, -1.0, 4.5]),
                height=np.full(n, 1.8), vx=np.full(n, 20.0), vy=np.zeros(n), ax=np.zeros(n), ay=np.zeros(n),
                lane_id=np.array([2, 2, 2, 5]))
    rep = validate_trackset(TrackSet(meta, {9: bad}))
    assert rep.kinds() == {"bounds", "frames", "kinematics", "lane"}


def test_meta_rejects_bad_values():
    with pytest.raises(ValueError):
        RecordingMeta(0.0, (0.0, 1.0))
    with pytest.raises(ValueError):
        RecordingMeta(25.0, (1.0, 0.0))
