"""highD-format trajectory recordings -> typed tracks in SI units.

Recording meta files carry ``frameRate`` and the lane markings, either as
``upperLaneMarkings``/``lowerLaneMarkings`` (highD) or a single
``laneMarkings`` column; the values are semicolon-separated floats. Track
files carry one row per (frame, vehicle).

Positions are stored as box centers. Real highD files give the upper-left
corner of the box; pass ``xy_origin="top_left"`` to convert at parse time.

Lane ids follow the highD numbering over the merged, ascending marking list
``m``: lane ``j`` is the strip ``(m[j-2], m[j-1])``, so valid ids are
``2 .. len(m)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import KMH
from .errors import (
    DuplicateFrame,
    EmptyFile,
    MalformedNumber,
    MissingColumn,
    NonContiguousFrames,
)

TRACK_COLUMNS = (
    "frame", "id", "x", "y", "width", "height",
    "xVelocity", "yVelocity", "xAcceleration", "yAcceleration", "laneId",
)
# Alternative km/h spellings accepted for the velocity columns.
KMH_ALIASES = {"xVelocity": "xVelocityKmh", "yVelocity": "yVelocityKmh"}


class VehicleClass(str, enum.Enum):
    CAR = "Car"
    TRUCK = "Truck"
    OTHER = "Other"

    @classmethod
    def parse(cls, text) -> "VehicleClass":
        key = str(text).strip().lower()
        if key == "car":
            return cls.CAR
        if key == "truck":
            return cls.TRUCK
        return cls.OTHER


@dataclass(frozen=True)
class RecordingMeta:
    frame_rate: float
    lane_marking_ys: tuple[float, ...]
    duration: float = 0.0
    id: str = ""

    def __post_init__(self):
        if not (self.frame_rate > 0 and math.isfinite(self.frame_rate)):
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")
        ys = self.lane_marking_ys
        if any(b <= a for a, b in zip(ys, ys[1:])):
            raise ValueError("lane markings must be strictly increasing")
        if self.duration < 0:
            raise ValueError("duration must be >= 0")

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def lane_bounds(self, lane_id: int) -> tuple[float, float]:
        if not self.has_lane(lane_id):
            raise KeyError(f"lane {lane_id} not defined by the lane markings")
        return self.lane_marking_ys[lane_id - 2], self.lane_marking_ys[lane_id - 1]

    def lane_center(self, lane_id: int) -> float:
        lo, hi = self.lane_bounds(lane_id)
        return 0.5 * (lo + hi)

    def has_lane(self, lane_id: int) -> bool:
        return 2 <= int(lane_id) <= len(self.lane_marking_ys)

    def lane_of(self, y: float) -> int:
        """Lane id containing lateral position ``y`` (may be off-road)."""
        return 1 + int(np.searchsorted(self.lane_marking_ys, y, side="left"))


@dataclass(frozen=True)
class TrackSample:
    frame: int
    x: float
    y: float
    width: float
    height: float
    vx: float
    vy: float
    ax: float
    ay: float
    lane_id: int


_ARRAY_FIELDS = ("frames", "x", "y", "width", "height", "vx", "vy", "ax", "ay", "lane_id")


@dataclass(frozen=True, eq=False)
class Track:
    """One vehicle's time series, stored column-wise."""

    vehicle_id: int
    vclass: VehicleClass
    frames: np.ndarray
    x: np.ndarray
    y: np.ndarray
    width: np.ndarray
    height: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    lane_id: np.ndarray

    def __post_init__(self):
        if len(self.frames) == 0:
            raise ValueError(f"track {self.vehicle_id} has no samples")
        for name in _ARRAY_FIELDS:
            arr = getattr(self, name)
            arr.setflags(write=False)
            if len(arr) != len(self.frames):
                raise ValueError(f"track {self.vehicle_id}: column {name} has wrong length")

    @classmethod
    def from_samples(cls, vehicle_id, samples, vclass=VehicleClass.CAR) -> "Track":
        samples = sorted(samples, key=lambda s: s.frame)
        cols = {
            "frames": np.array([s.frame for s in samples], dtype=np.int64),
            "lane_id": np.array([s.lane_id for s in samples], dtype=np.int64),
        }
        for name in ("x", "y", "width", "height", "vx", "vy", "ax", "ay"):
            cols[name] = np.array([getattr(s, name) for s in samples], dtype=float)
        return cls(vehicle_id=int(vehicle_id), vclass=VehicleClass(vclass), **cols)

    def __len__(self):
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, Track):
            return NotImplemented
        return (
            self.vehicle_id == other.vehicle_id
            and self.vclass == other.vclass
            and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in _ARRAY_FIELDS)
        )

    @property
    def first_frame(self) -> int:
        return int(self.frames[0])

    @property
    def last_frame(self) -> int:
        return int(self.frames[-1])

    @property
    def heading(self) -> int:
        """+1 when driving towards increasing x, -1 otherwise."""
        med = float(np.median(self.vx))
        return -1 if med < 0 else 1

    def index_of(self, frame: int) -> int:
        i = int(frame) - self.first_frame
        if i < 0 or i >= len(self.frames):
            raise IndexError(f"frame {frame} outside track {self.vehicle_id}")
        return i

    def has_frame(self, frame: int) -> bool:
        return self.first_frame <= int(frame) <= self.last_frame

    def sample(self, i: int) -> TrackSample:
        return TrackSample(
            frame=int(self.frames[i]),
            x=float(self.x[i]), y=float(self.y[i]),
            width=float(self.width[i]), height=float(self.height[i]),
            vx=float(self.vx[i]), vy=float(self.vy[i]),
            ax=float(self.ax[i]), ay=float(self.ay[i]),
            lane_id=int(self.lane_id[i]),
        )

    @property
    def samples(self) -> list[TrackSample]:
        return [self.sample(i) for i in range(len(self.frames))]


@dataclass(frozen=True)
class TrackSet:
    meta: RecordingMeta
    tracks: dict[int, Track] = field(default_factory=dict)

    def __getitem__(self, vehicle_id) -> Track:
        return self.tracks[vehicle_id]

    def __contains__(self, vehicle_id):
        return vehicle_id in self.tracks

    def __len__(self):
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks.values())


@dataclass(frozen=True)
class Violation:
    vehicle_id: int
    frame: int | None
    kind: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def _read_csv(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.stat().st_size == 0:
        raise EmptyFile(path)
    try:
        df = pd.read_csv(path, dtype=str, skipinitialspace=True, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise EmptyFile(path) from None
    df.columns = [c.strip() for c in df.columns]
    if df.empty:
        raise EmptyFile(path)
    return df


def _float_cell(df, row, col) -> float:
    text = str(df.at[row, col]).strip()
    try:
        value = float(text)
    except ValueError:
        raise MalformedNumber(row, col, text) from None
    if not math.isfinite(value):
        raise MalformedNumber(row, col, text)
    return value


def _marking_list(df, row, col) -> list[float]:
    text = str(df.at[row, col]).strip()
    if not text:
        return []
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            out.append(float(part))
        except ValueError:
            raise MalformedNumber(row, col, text) from None
    return out


def parse_meta(path) -> RecordingMeta:
    """Parse a recording meta CSV (first data row is used)."""
    df = _read_csv(path)
    if "frameRate" not in df.columns:
        raise MissingColumn("frameRate", path)
    frame_rate = _float_cell(df, 0, "frameRate")
    if frame_rate <= 0:
        raise MalformedNumber(0, "frameRate", df.at[0, "frameRate"])
    if "laneMarkings" in df.columns:
        marks = _marking_list(df, 0, "laneMarkings")
    elif "upperLaneMarkings" in df.columns or "lowerLaneMarkings" in df.columns:
        marks = []
        for col in ("upperLaneMarkings", "lowerLaneMarkings"):
            if col in df.columns:
                marks.extend(_marking_list(df, 0, col))
    else:
        raise MissingColumn("upperLaneMarkings/lowerLaneMarkings", path)
    marks = sorted(marks)
    if any(b <= a for a, b in zip(marks, marks[1:])):
        raise MalformedNumber(0, "laneMarkings", ";".join(map(str, marks)))
    duration = _float_cell(df, 0, "duration") if "duration" in df.columns else 0.0
    rec_id = str(df.at[0, "id"]).strip() if "id" in df.columns else Path(path).stem
    return RecordingMeta(frame_rate=frame_rate, lane_marking_ys=tuple(marks),
                         duration=duration, id=rec_id)


def _numeric_column(df: pd.DataFrame, col: str) -> np.ndarray:
    text = df[col].str.strip()
    try:
        # astype parses exactly; to_numeric does not round-trip every float
        values = text.astype(float).to_numpy()
    except ValueError:
        values = pd.to_numeric(text, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise MalformedNumber(row, col, df.at[row, col])
    return values


def _read_classes(path, class_column) -> dict[int, VehicleClass]:
    df = _read_csv(path)
    for col in ("id", class_column):
        if col not in df.columns:
            raise MissingColumn(col, path)
    ids = _numeric_column(df, "id").astype(np.int64)
    return {int(i): VehicleClass.parse(c) for i, c in zip(ids, df[class_column])}


def parse_tracks(path, meta: RecordingMeta, class_path=None, class_column: str = "class",
                 xy_origin: str = "center") -> TrackSet:
    """Parse a tracks CSV into a TrackSet.

    The vehicle class comes from ``class_column`` in the tracks file itself,
    or from a companion per-track file (``class_path``, e.g. highD's
    ``tracksMeta.csv``). Without either, every vehicle is a Car.
    """
    if xy_origin not in ("center", "top_left"):
        raise ValueError(f"xy_origin must be 'center' or 'top_left', got {xy_origin!r}")
    df = _read_csv(path)
    cols = {}
    for col in TRACK_COLUMNS:
        if col in df.columns:
            cols[col] = _numeric_column(df, col)
        elif col in KMH_ALIASES and KMH_ALIASES[col] in df.columns:
            cols[col] = _numeric_column(df, KMH_ALIASES[col]) * KMH
        else:
            raise MissingColumn(col, path)
    for col in ("frame", "id", "laneId"):
        if np.any(cols[col] != np.round(cols[col])):
            row = int(np.flatnonzero(cols[col] != np.round(cols[col]))[0])
            raise MalformedNumber(row, col, df.at[row, col])

    classes: dict[int, VehicleClass] = {}
    if class_path is not None:
        classes = _read_classes(class_path, class_column)
    elif class_column in df.columns:
        for vid, text in zip(cols["id"].astype(np.int64), df[class_column]):
            classes.setdefault(int(vid), VehicleClass.parse(text))

    frame = cols["frame"].astype(np.int64)
    vid = cols["id"].astype(np.int64)
    order = np.lexsort((frame, vid))
    frame, vid = frame[order], vid[order]
    x, y = cols["x"][order], cols["y"][order]
    w, h = cols["width"][order], cols["height"][order]
    if xy_origin == "top_left":
        x = x + w / 2.0
        y = y + h / 2.0
    tracks: dict[int, Track] = {}
    starts = np.flatnonzero(np.r_[True, vid[1:] != vid[:-1]])
    ends = np.r_[starts[1:], len(vid)]
    for s, e in zip(starts, ends):
        v = int(vid[s])
        fr = frame[s:e]
        steps = np.diff(fr)
        if np.any(steps == 0):
            k = int(np.flatnonzero(steps == 0)[0])
            raise DuplicateFrame(v, int(fr[k]))
        if np.any(steps != 1):
            k = int(np.flatnonzero(steps != 1)[0])
            raise NonContiguousFrames(v, int(fr[k]))
        sl = order[s:e]
        tracks[v] = Track(
            vehicle_id=v,
            vclass=classes.get(v, VehicleClass.CAR),
            frames=fr.copy(),
            x=x[s:e].copy(), y=y[s:e].copy(),
            width=w[s:e].copy(), height=h[s:e].copy(),
            vx=cols["xVelocity"][sl], vy=cols["yVelocity"][sl],
            ax=cols["xAcceleration"][sl], ay=cols["yAcceleration"][sl],
            lane_id=cols["laneId"][sl].astype(np.int64),
        )
    return TrackSet(meta=meta, tracks=tracks)


def write_meta(meta: RecordingMeta, path) -> None:
    pd.DataFrame([{
        "id": meta.id,
        "frameRate": repr(meta.frame_rate),
        "duration": repr(meta.duration),
        "laneMarkings": ";".join(repr(v) for v in meta.lane_marking_ys),
    }]).to_csv(path, index=False)


def tracks_frame(ts: TrackSet) -> pd.DataFrame:
    """All samples of a TrackSet as one long DataFrame (center positions)."""
    parts = []
    for t in ts:
        parts.append(pd.DataFrame({
            "frame": t.frames, "id": t.vehicle_id,
            "x": t.x, "y": t.y, "width": t.width, "height": t.height,
            "xVelocity": t.vx, "yVelocity": t.vy,
            "xAcceleration": t.ax, "yAcceleration": t.ay,
            "laneId": t.lane_id, "class": t.vclass.value,
        }))
    if not parts:
        return pd.DataFrame(columns=list(TRACK_COLUMNS) + ["class"])
    return pd.concat(parts, ignore_index=True).sort_values(["frame", "id"], kind="stable")


def write_tracks(ts: TrackSet, path) -> None:
    """Write tracks in the format read by :func:`parse_tracks` (center origin).

    Floats are written with ``repr`` so a parse round-trip is exact.
    """
    df = tracks_frame(ts)
    float_cols = ["x", "y", "width", "height", "xVelocity", "yVelocity",
                  "xAcceleration", "yAcceleration"]
    for c in float_cols:
        df[c] = df[c].map(repr)
    df.to_csv(path, index=False)


def validate_trackset(ts: TrackSet) -> ValidationReport:
    """Collect invariant violations; the TrackSet itself is not modified."""
    report = ValidationReport()
    dt = ts.meta.dt
    add = report.violations.append
    for t in ts:
        vid = t.vehicle_id
        for name in ("width", "height"):
            bad = np.flatnonzero(getattr(t, name) <= 0)
            for i in bad:
                add(Violation(vid, int(t.frames[i]), "bounds", f"{name} must be positive"))
        bad = np.flatnonzero(t.frames < 0)
        for i in bad:
            add(Violation(vid, int(t.frames[i]), "bounds", "negative frame index"))
        steps = np.diff(t.frames)
        for i in np.flatnonzero(steps != 1):
            add(Violation(vid, int(t.frames[i + 1]), "frames", "frames not gap-free and increasing"))
        if len(t) > 1:
            speed = np.hypot(t.vx, t.vy)
            v_max = np.maximum(np.maximum(speed[:-1], speed[1:]), 1.0)
            jump = np.hypot(np.diff(t.x), np.diff(t.y))
            for i in np.flatnonzero(jump > 3.0 * v_max * dt):
                add(Violation(vid, int(t.frames[i + 1]), "kinematics",
                              f"moved {jump[i]:.2f} m in one frame at speed <= {v_max[i]:.2f} m/s"))
        for lane in np.unique(t.lane_id):
            if not ts.meta.has_lane(int(lane)):
                add(Violation(vid, None, "lane", f"lane id {int(lane)} not defined by markings"))
    return report
