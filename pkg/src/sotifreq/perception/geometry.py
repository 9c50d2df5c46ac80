"""Boxes, frames and the pinhole camera shared by the perception harness.

2D boxes are ``(x1, y1, x2, y2)`` in pixels. 3D boxes are axis-aligned
``(cx, cy, cz, ex, ey, ez)`` in camera coordinates (x right, y down,
z forward) with extents along each axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels


@dataclass(frozen=True)
class Camera:
    f: float = 721.5
    cx: float = 609.6
    cy: float = 172.9
    width: int = 1242
    height: int = 375

    def project(self, boxes3d) -> np.ndarray:
        """Image-clipped bounding rectangles of the projected box corners."""
        b = np.asarray(boxes3d, dtype=float).reshape(-1, 6)
        if len(b) == 0:
            return np.zeros((0, 4))
        signs = np.array([[sx, sy, sz] for sx in (-0.5, 0.5) for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)])
        corners = b[:, None, :3] + signs[None, :, :] * b[:, None, 3:]
        z = np.maximum(corners[..., 2], 1e-3)
        u = self.f * corners[..., 0] / z + self.cx
        v = self.f * corners[..., 1] / z + self.cy
        out = np.stack([u.min(1), v.min(1), u.max(1), v.max(1)], axis=1)
        out[:, [0, 2]] = np.clip(out[:, [0, 2]], 0.0, self.width)
        out[:, [1, 3]] = np.clip(out[:, [1, 3]], 0.0, self.height)
        return out


@dataclass
class DetectionFrame:
    """Boxes of one frame.

    ``ids`` are object ids for ground truth and tracker output; for raw
    detections they name the ground-truth object a box was derived from,
    -1 marking clutter.
    """

    frame: int
    boxes: np.ndarray
    ids: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=float)
        if self.boxes.size == 0:
            self.boxes = self.boxes.reshape(0, self.boxes.shape[-1] if self.boxes.ndim == 2 else 4)
        n = len(self.boxes)
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(n)
        self.scores = np.asarray(self.scores, dtype=float).reshape(n)
        if self.boxes.shape[1] not in (4, 6):
            raise ValueError("boxes must have 4 (2D) or 6 (3D) columns")
        if self.boxes.shape[1] == 4 and n and (
                np.any(self.boxes[:, 2] <= self.boxes[:, 0]) or np.any(self.boxes[:, 3] <= self.boxes[:, 1])):
            raise ValueError(f"frame {self.frame}: 2D boxes need x1 < x2 and y1 < y2")
        if self.boxes.shape[1] == 6 and n and np.any(self.boxes[:, 3:] <= 0):
            raise ValueError(f"frame {self.frame}: 3D extents must be positive")
        if n and (np.any(self.scores < 0) or np.any(self.scores > 1)):
            raise ValueError(f"frame {self.frame}: scores must lie in [0, 1]")

    @property
    def is3d(self) -> bool:
        return self.boxes.shape[1] == 6

    def __len__(self):
        return len(self.boxes)

    @classmethod
    def empty(cls, frame: int, dim: int = 4) -> "DetectionFrame":
        return cls(frame, np.zeros((0, dim)), np.zeros(0, dtype=np.int64), np.zeros(0))

    def to_dict(self) -> dict:
        return {"frame": int(self.frame), "boxes": self.boxes.tolist(),
                "ids": self.ids.tolist(), "scores": self.scores.tolist()}

    @classmethod
    def from_dict(cls, d: dict, dim: int = 4) -> "DetectionFrame":
        boxes = np.asarray(d.get("boxes", []), dtype=float)
        if boxes.size == 0:
            boxes = np.zeros((0, dim))
        n = len(boxes)
        ids = d.get("ids")
        scores = d.get("scores")
        return cls(int(d["frame"]), boxes,
                   np.full(n, -1) if ids is None else ids,
                   np.ones(n) if scores is None else scores)

    def subset(self, mask) -> "DetectionFrame":
        mask = np.asarray(mask)
        return DetectionFrame(self.frame, self.boxes[mask], self.ids[mask], self.scores[mask])


def iou(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    dim = a.shape[1]
    b = np.asarray(b, dtype=float).reshape(-1, dim)
    if dim == 4:
        return kernels.iou_matrix_2d(a, b)
    return kernels.iou_matrix_3d(a, b)


def box_corners(boxes) -> np.ndarray:
    """(min corner, max corner) coordinates; 2D boxes already are that."""
    b = np.asarray(boxes, dtype=float)
    if b.shape[1] == 4:
        return b
    return np.hstack([b[:, :3] - b[:, 3:] / 2, b[:, :3] + b[:, 3:] / 2])


def corner_accuracy(det, gt) -> np.ndarray:
    """1 minus the summed absolute corner error over the gt box diagonal, floored at 0."""
    cd, cg = box_corners(det), box_corners(gt)
    k = cg.shape[1] // 2
    err = np.abs(cd - cg).sum(axis=1)
    diag = np.linalg.norm(cg[:, k:] - cg[:, :k], axis=1)
    return np.clip(1.0 - err / diag, 0.0, 1.0)


def check_aligned(*seqs) -> None:
    from ..errors import FrameMisalignment

    frames = [tuple(int(f.frame) for f in s) for s in seqs]
    if any(fr != frames[0] for fr in frames[1:]):
        raise FrameMisalignment("sequences do not share the same frame indices")
