"""Mix detector output toward ground truth, one error channel at a time.

Per modality there are three channels. The FN channel restores a fraction
``z`` of the missed ground-truth boxes, the FP channel deletes a fraction
``z`` of the clutter, and the accuracy channel shrinks the corner error of
every true detection by ``z``. The restored and deleted subsets are the
first entries of one seeded permutation, so they are nested in ``z``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import FrameMisalignment
from .geometry import DetectionFrame, iou

CHANNELS = ("acc2d", "fn2d", "fp2d", "acc3d", "fn3d", "fp3d")
CHANNEL_LABELS = {
    "acc2d": "2D Detection Accuracy", "fn2d": "2D FN Rate", "fp2d": "2D FP Rate",
    "acc3d": "3D Detection Accuracy", "fn3d": "3D FN Rate", "fp3d": "3D FP Rate",
}
FN_CHANNELS = ("fn2d", "fn3d")


@dataclass(frozen=True)
class LevelVector:
    acc2d: float = 0.0
    fn2d: float = 0.0
    fp2d: float = 0.0
    acc3d: float = 0.0
    fn3d: float = 0.0
    fp3d: float = 0.0

    def __post_init__(self):
        for c in CHANNELS:
            v = getattr(self, c)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"level {c}={v} outside [0, 1]")

    @classmethod
    def from_array(cls, a) -> "LevelVector":
        a = np.asarray(a, dtype=float).reshape(len(CHANNELS))
        return cls(*(float(v) for v in a))

    @classmethod
    def full(cls, z: float) -> "LevelVector":
        return cls(*([float(z)] * len(CHANNELS)))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, c) for c in CHANNELS])

    def modality(self, dim: int) -> tuple[float, float, float]:
        if dim == 4:
            return self.acc2d, self.fn2d, self.fp2d
        return self.acc3d, self.fn3d, self.fp3d


def _provenance(det: DetectionFrame, gt: DetectionFrame, match: str, tau: float):
    """Index of the gt box behind each detection (-1 for clutter)."""
    if match == "provenance":
        pos = {int(i): k for k, i in enumerate(gt.ids)}
        return np.array([pos.get(int(i), -1) for i in det.ids], dtype=np.int64)
    src = np.full(len(det), -1, dtype=np.int64)
    if len(det) and len(gt):
        for i, j in kernels.greedy_match(iou(det.boxes, gt.boxes), tau):
            src[i] = j
    return src


def _first(n_total: int, z: float) -> int:
    return int(np.floor(z * n_total + 0.5))


def perturb_detections(det, gt, acc: float = 0.0, fn: float = 0.0, fp: float = 0.0,
                       seed: int = 0, match: str = "provenance", tau: float = 0.5):
    """Return new frames with the three error channels of one modality repaired."""
    det, gt = list(det), list(gt)
    if len(det) != len(gt) or any(a.frame != b.frame for a, b in zip(det, gt)):
        raise FrameMisalignment("detections and ground truth are not frame-aligned")
    for v in (acc, fn, fp):
        if not (0.0 <= v <= 1.0):
            raise ValueError("levels must lie in [0, 1]")
    src = [_provenance(d, g, match, tau) for d, g in zip(det, gt)]
    missed = []
    clutter = []
    for k, (d, g, s) in enumerate(zip(det, gt, src)):
        covered = set(int(j) for j in s if j >= 0)
        missed += [(k, j) for j in range(len(g)) if j not in covered]
        clutter += [(k, i) for i in range(len(d)) if s[i] < 0]
    rng = np.random.default_rng([seed, 101])
    restore = set(missed[i] for i in rng.permutation(len(missed))[:_first(len(missed), fn)])
    rng = np.random.default_rng([seed, 202])
    drop = set(clutter[i] for i in rng.permutation(len(clutter))[:_first(len(clutter), fp)])

    out = []
    for k, (d, g, s) in enumerate(zip(det, gt, src)):
        boxes = d.boxes.copy()
        true = s >= 0
        if np.any(true):
            gb = g.boxes[s[true]]
            boxes[true] = gb + (1.0 - acc) * (boxes[true] - gb)
        keep = np.array([not (s[i] < 0 and (k, i) in drop) for i in range(len(d))], dtype=bool)
        add = [j for j in range(len(g)) if (k, j) in restore]
        ids = np.concatenate([d.ids[keep], g.ids[add]])
        out.append(DetectionFrame(d.frame, np.vstack([boxes[keep], g.boxes[add]]).reshape(-1, boxes.shape[1]),
                                  ids, np.concatenate([d.scores[keep], np.ones(len(add))])))
    return out


def perturb_sequence(seq, level: LevelVector, seed: int = 0):
    """Perturb both modalities of a Sequence; returns ``(det2d, det3d)``."""
    a2, f2, p2 = level.modality(4)
    a3, f3, p3 = level.modality(6)
    d2 = perturb_detections(seq.det2d, seq.gt2d, a2, f2, p2, seed=seed)
    d3 = perturb_detections(seq.det3d, seq.gt3d, a3, f3, p3, seed=seed + 7919)
    return d2, d3


def latin_grid(n_steps: int = 101, seed: int = 0) -> np.ndarray:
    """``n_steps`` level vectors; each channel visits every 1/(n_steps-1) step once."""
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    rng = np.random.default_rng([seed, 303])
    levels = np.linspace(0.0, 1.0, n_steps)
    cols = [levels[rng.permutation(n_steps)] for _ in CHANNELS]
    return np.stack(cols, axis=1)


def sweep_grid(channel: str, n_steps: int = 101, base: float = 0.0) -> np.ndarray:
    if channel not in CHANNELS:
        raise KeyError(channel)
    g = np.full((n_steps, len(CHANNELS)), float(base))
    g[:, CHANNELS.index(channel)] = np.linspace(0.0, 1.0, n_steps)
    return g
