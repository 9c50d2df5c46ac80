"""A small 2D/3D fusion tracker and a subprocess bridge for external trackers.

The surrogate fuses each 3D detection with the 2D detection its projection
overlaps, associates fused detections to live tracks greedily (3D IoU
first, then 2D IoU), coasts unmatched tracks at constant velocity for up
to ``max_age`` frames and starts a track for every unmatched detection.
Output boxes are 2D.
"""
from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..errors import ExternalTrackerFailure
from .geometry import Camera, DetectionFrame, check_aligned, iou


@dataclass(frozen=True)
class TrackerParams:
    fuse_iou: float = 0.3
    iou_3d: float = 0.05
    iou_2d: float = 0.2
    max_age: int = 3
    camera: Camera = field(default_factory=Camera)


@dataclass
class _Track:
    tid: int
    box2d: np.ndarray
    vel2d: np.ndarray
    box3d: np.ndarray | None
    vel3d: np.ndarray
    score: float
    age: int = 0
    hits: int = 1
    obs2d: np.ndarray | None = None
    obs3d: np.ndarray | None = None

    def __post_init__(self):
        self.obs2d = self.box2d.copy()
        self.obs3d = None if self.box3d is None else self.box3d.copy()


def _greedy(a: np.ndarray, b: np.ndarray, thr: float):
    if len(a) == 0 or len(b) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return kernels.greedy_match(iou(a, b), thr)


def _fuse(d2: DetectionFrame, d3: DetectionFrame, p: TrackerParams):
    """List of (box2d, box3d | None, score)."""
    proj = p.camera.project(d3.boxes)
    valid3 = (proj[:, 2] > proj[:, 0]) & (proj[:, 3] > proj[:, 1]) if len(proj) else np.zeros(0, bool)
    fused = []
    used2, used3 = set(), set()
    idx3 = np.flatnonzero(valid3)
    for i, jj in _greedy(d2.boxes, proj[idx3], p.fuse_iou):
        j = int(idx3[jj])
        fused.append((d2.boxes[i], d3.boxes[j], max(d2.scores[i], d3.scores[j])))
        used2.add(int(i))
        used3.add(j)
    for i in range(len(d2)):
        if i not in used2:
            fused.append((d2.boxes[i], None, d2.scores[i]))
    for j in idx3:
        if int(j) not in used3:
            fused.append((proj[j], d3.boxes[j], d3.scores[j]))
    return fused


def surrogate_mot(det2d, det3d, params: TrackerParams | None = None) -> list[DetectionFrame]:
    p = params or TrackerParams()
    det2d, det3d = list(det2d), list(det3d)
    check_aligned(det2d, det3d)
    cam = p.camera
    tracks: list[_Track] = []
    next_id = 1
    out = []
    for d2, d3 in zip(det2d, det3d):
        dets = _fuse(d2, d3, p)
        pred2 = np.array([t.box2d + t.vel2d for t in tracks]).reshape(-1, 4)
        pred3 = [None if t.box3d is None else t.box3d + t.vel3d for t in tracks]
        assigned: dict[int, int] = {}

        # stage 1: 3D association
        ti3 = [k for k, b in enumerate(pred3) if b is not None]
        di3 = [k for k, d in enumerate(dets) if d[1] is not None]
        if ti3 and di3:
            a = np.array([pred3[k] for k in ti3])
            b = np.array([dets[k][1] for k in di3])
            for i, j in _greedy(a, b, p.iou_3d):
                assigned[ti3[i]] = di3[j]
        # stage 2: 2D association of what is left
        ti2 = [k for k in range(len(tracks)) if k not in assigned]
        taken = set(assigned.values())
        di2 = [k for k in range(len(dets)) if k not in taken]
        if ti2 and di2:
            a = pred2[ti2]
            b = np.array([dets[k][0] for k in di2])
            for i, j in _greedy(a, b, p.iou_2d):
                assigned[ti2[i]] = di2[j]

        frame_boxes, frame_ids, frame_scores = [], [], []
        alive = []
        for k, t in enumerate(tracks):
            if k in assigned:
                b2, b3, sc = dets[assigned[k]]
                gapn = t.age + 1
                t.vel2d = (b2 - t.obs2d) / gapn
                t.box2d = np.asarray(b2, dtype=float).copy()
                t.obs2d = t.box2d.copy()
                if b3 is not None:
                    if t.obs3d is not None:
                        t.vel3d = (b3 - t.obs3d) / gapn
                        t.vel3d[3:] = 0.0
                    t.box3d = np.asarray(b3, dtype=float).copy()
                    t.obs3d = t.box3d.copy()
                elif t.box3d is not None:
                    t.box3d = pred3[k]
                t.score, t.age, t.hits = float(sc), 0, t.hits + 1
            else:
                t.age += 1
                if t.age > p.max_age:
                    continue
                t.box2d = pred2[k].copy()
                if t.box3d is not None:
                    t.box3d = pred3[k]
            alive.append(t)
            x1, y1, x2, y2 = (float(v) for v in t.box2d)
            x1, x2 = min(max(x1, 0.0), cam.width), min(max(x2, 0.0), cam.width)
            y1, y2 = min(max(y1, 0.0), cam.height), min(max(y2, 0.0), cam.height)
            if x2 > x1 and y2 > y1:
                frame_boxes.append((x1, y1, x2, y2))
                frame_ids.append(t.tid)
                frame_scores.append(min(max(t.score, 0.0), 1.0))
        taken = set(assigned.values())
        for k, (b2, b3, sc) in enumerate(dets):
            if k in taken:
                continue
            t = _Track(next_id, np.asarray(b2, dtype=float).copy(), np.zeros(4),
                       None if b3 is None else np.asarray(b3, dtype=float).copy(), np.zeros(6), float(sc))
            next_id += 1
            alive.append(t)
            frame_boxes.append(t.box2d.copy())
            frame_ids.append(t.tid)
            frame_scores.append(min(max(t.score, 0.0), 1.0))
        tracks = alive
        out.append(DetectionFrame(d2.frame, np.array(frame_boxes).reshape(-1, 4),
                                  np.array(frame_ids, dtype=np.int64), np.array(frame_scores)))
    return out


class ExternalTracker:
    """Run a tracker executable: one JSON object per frame in, one per frame out.

    Input lines are ``{"frame", "det2d": {...}, "det3d": {...}}`` with the
    DetectionFrame dictionary layout; output lines are 2D DetectionFrame
    dictionaries whose ``ids`` are track ids.
    """

    def __init__(self, command, timeout: float | None = 600.0):
        self.command = list(command) if not isinstance(command, str) else command
        self.timeout = timeout

    def __call__(self, det2d, det3d, params=None) -> list[DetectionFrame]:
        det2d, det3d = list(det2d), list(det3d)
        check_aligned(det2d, det3d)
        payload = "".join(
            json.dumps({"frame": a.frame, "det2d": a.to_dict(), "det3d": b.to_dict()}) + "\n"
            for a, b in zip(det2d, det3d))
        try:
            proc = subprocess.run(self.command, input=payload, capture_output=True, text=True,
                                  timeout=self.timeout, shell=isinstance(self.command, str))
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExternalTrackerFailure(-1, str(exc)) from exc
        if proc.returncode != 0:
            raise ExternalTrackerFailure(proc.returncode, proc.stderr)
        try:
            frames = [DetectionFrame.from_dict(json.loads(ln), 4)
                      for ln in proc.stdout.splitlines() if ln.strip()]
        except (ValueError, KeyError) as exc:
            raise ExternalTrackerFailure(proc.returncode, f"unparseable tracker output: {exc}") from exc
        check_aligned(det2d, frames)
        return frames
