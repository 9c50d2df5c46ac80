"""Synthetic tracked-object sequences with a noisy 2D and 3D detector.

Ground truth and detector noise come from separate random streams, so two
detector seeds over a shared ground-truth seed differ only in detections.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Camera, DetectionFrame

_GT_STREAM = 11
_DET_STREAM = 23


@dataclass(frozen=True)
class NoiseSpec:
    corner2d: float = 0.12  # uniform half-width, fraction of box width/height
    center3d: float = 0.12  # uniform half-width, fraction of extent
    extent3d: float = 0.05
    miss2d: float = 0.15
    miss3d: float = 0.10
    clutter2d: float = 0.6  # Poisson mean per frame
    clutter3d: float = 0.4
    occlusion: float = 0.02  # per object-frame chance that a joint 2D/3D dropout starts
    occlusion_len: tuple[int, int] = (2, 16)

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SequenceConfig:
    n_frames: int = 60
    n_objects: int = 6
    fps: float = 10.0
    depth_range: tuple[float, float] = (8.0, 70.0)
    lateral_fraction: float = 0.55  # |x| <= fraction * depth keeps objects in view
    depth_speed: float = 3.0  # max |dz/dt| in m/s
    lateral_speed: float = 0.05  # max |d(x/z)/dt| per s
    extent: tuple[float, float, float] = (1.8, 1.5, 4.2)
    mount_height: float = 1.65
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    camera: Camera = field(default_factory=Camera)

    def __post_init__(self):
        if int(self.n_frames) < 1:
            raise ValueError("n_frames must be >= 1")
        if int(self.n_objects) < 0:
            raise ValueError("n_objects must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceConfig":
        d = dict(d)
        if "noise" in d:
            nz = dict(d["noise"])
            if "occlusion_len" in nz:
                nz["occlusion_len"] = tuple(nz["occlusion_len"])
            d["noise"] = NoiseSpec(**nz)
        if "camera" in d:
            d["camera"] = Camera(**d["camera"])
        for k in ("depth_range", "extent"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class Sequence:
    gt3d: list[DetectionFrame]
    gt2d: list[DetectionFrame]
    det2d: list[DetectionFrame]
    det3d: list[DetectionFrame]
    camera: Camera = field(default_factory=Camera)

    def __len__(self):
        return len(self.gt2d)

    @property
    def n_gt_boxes(self) -> int:
        return sum(len(f) for f in self.gt2d)

    def to_jsonl(self) -> str:
        head = {"camera": asdict(self.camera)}
        lines = [json.dumps(head)]
        for g3, g2, d2, d3 in zip(self.gt3d, self.gt2d, self.det2d, self.det3d):
            lines.append(json.dumps({"frame": g2.frame, "gt3d": g3.to_dict(), "gt2d": g2.to_dict(),
                                     "det2d": d2.to_dict(), "det3d": d3.to_dict()}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "Sequence":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = json.loads(lines[0])
        g3, g2, d2, d3 = [], [], [], []
        for ln in lines[1:]:
            rec = json.loads(ln)
            g3.append(DetectionFrame.from_dict(rec["gt3d"], 6))
            g2.append(DetectionFrame.from_dict(rec["gt2d"], 4))
            d2.append(DetectionFrame.from_dict(rec["det2d"], 4))
            d3.append(DetectionFrame.from_dict(rec["det3d"], 6))
        return cls(g3, g2, d2, d3, Camera(**head.get("camera", {})))

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "Sequence":
        return cls.from_jsonl(Path(path).read_text())


def _bounce(p0, v, lo, hi, n, dt):
    """Piecewise-linear motion reflected at the interval ends."""
    out = np.empty(n)
    p = p0
    for k in range(n):
        out[k] = p
        p += v * dt
        if p < lo or p > hi:
            v = -v
            p = min(max(p, lo), hi)
    return out


def _gt_tracks(cfg: SequenceConfig, rng) -> np.ndarray:
    """(n_frames, n_objects, 6) axis-aligned boxes."""
    n, m, dt = int(cfg.n_frames), int(cfg.n_objects), 1.0 / cfg.fps
    lo, hi = cfg.depth_range
    ex = np.array(cfg.extent, dtype=float)
    boxes = np.zeros((n, m, 6))
    for j in range(m):
        z = _bounce(rng.uniform(lo, hi), rng.uniform(-cfg.depth_speed, cfg.depth_speed), lo, hi, n, dt)
        s = _bounce(rng.uniform(-1, 1), rng.uniform(-1, 1) * cfg.lateral_speed / cfg.lateral_fraction,
                    -1.0, 1.0, n, dt)
        scale = rng.uniform(0.9, 1.1)
        boxes[:, j, 0] = s * cfg.lateral_fraction * z
        boxes[:, j, 1] = cfg.mount_height - scale * ex[1] / 2
        boxes[:, j, 2] = z
        boxes[:, j, 3:] = scale * ex
    return boxes


def _jitter2d(box, a, rng):
    w, h = box[2] - box[0], box[3] - box[1]
    d = rng.uniform(-a, a, 4) * np.array([w, h, w, h])
    out = box + d
    if out[2] <= out[0] or out[3] <= out[1]:
        return box.copy()
    return out


def _jitter3d(box, a_c, a_e, rng):
    out = box.copy()
    out[:3] += rng.uniform(-a_c, a_c, 3) * box[3:]
    out[3:] *= 1.0 + rng.uniform(-a_e, a_e, 3)
    return out


def _clutter2d(cam: Camera, k, rng):
    w = rng.uniform(30, 160, k)
    h = w * rng.uniform(0.6, 1.0, k)
    x1 = rng.uniform(0, cam.width - w)
    y1 = rng.uniform(cam.cy - 40, np.maximum(cam.cy - 39, cam.height - h))
    return np.stack([x1, y1, x1 + w, y1 + h], axis=1).reshape(-1, 4)


def _clutter3d(cfg: SequenceConfig, k, rng):
    z = rng.uniform(*cfg.depth_range, k)
    x = rng.uniform(-1, 1, k) * cfg.lateral_fraction * z
    ex = np.array(cfg.extent)[None, :] * rng.uniform(0.8, 1.2, (k, 1))
    y = cfg.mount_height - ex[:, 1] / 2
    return np.hstack([np.stack([x, y, z], axis=1), ex]).reshape(-1, 6)


def generate_synthetic_sequence(cfg: SequenceConfig | None = None, seed: int = 0,
                                gt_seed: int | None = None) -> Sequence:
    cfg = cfg or SequenceConfig()
    gt_rng = np.random.default_rng([seed if gt_seed is None else gt_seed, _GT_STREAM])
    rng = np.random.default_rng([seed, _DET_STREAM])
    cam, nz = cfg.camera, cfg.noise
    tracks = _gt_tracks(cfg, gt_rng)
    ids = np.arange(1, int(cfg.n_objects) + 1)
    n, m = int(cfg.n_frames), int(cfg.n_objects)
    starts = rng.random((n, m)) < nz.occlusion
    lengths = rng.integers(nz.occlusion_len[0], nz.occlusion_len[1] + 1, (n, m))
    occluded = np.zeros((n, m), dtype=bool)
    for k, j in zip(*np.nonzero(starts)):
        occluded[k:k + lengths[k, j], j] = True
    gt3d, gt2d, det2d, det3d = [], [], [], []
    for k in range(n):
        b3 = tracks[k]
        b2 = cam.project(b3)
        vis = (b2[:, 2] > b2[:, 0] + 1.0) & (b2[:, 3] > b2[:, 1] + 1.0)
        b3, b2, fid, occ = b3[vis], b2[vis], ids[vis], occluded[k][vis]
        ones = np.ones(len(fid))
        gt3d.append(DetectionFrame(k, b3, fid, ones))
        gt2d.append(DetectionFrame(k, b2, fid, ones))

        # one draw per object per quantity keeps the streams aligned across noise settings
        keep2 = (rng.random(len(fid)) >= nz.miss2d) & ~occ
        keep3 = (rng.random(len(fid)) >= nz.miss3d) & ~occ
        s2 = rng.uniform(0.6, 1.0, len(fid))
        s3 = rng.uniform(0.6, 1.0, len(fid))
        j2 = np.array([_jitter2d(b, nz.corner2d, rng) for b in b2]).reshape(-1, 4)
        j3 = np.array([_jitter3d(b, nz.center3d, nz.extent3d, rng) for b in b3]).reshape(-1, 6)
        c2 = _clutter2d(cam, rng.poisson(nz.clutter2d), rng)
        c3 = _clutter3d(cfg, rng.poisson(nz.clutter3d), rng)
        det2d.append(DetectionFrame(
            k, np.vstack([j2[keep2], c2]),
            np.concatenate([fid[keep2], np.full(len(c2), -1)]),
            np.concatenate([s2[keep2], rng.uniform(0.3, 0.8, len(c2))])))
        det3d.append(DetectionFrame(
            k, np.vstack([j3[keep3], c3]),
            np.concatenate([fid[keep3], np.full(len(c3), -1)]),
            np.concatenate([s3[keep3], rng.uniform(0.3, 0.8, len(c3))])))
    return Sequence(gt3d, gt2d, det2d, det3d, cam)


def generate_sequences(cfg: SequenceConfig | None, n: int, seed: int = 0) -> list[Sequence]:
    return [generate_synthetic_sequence(cfg, seed=seed * 1000 + i) for i in range(n)]
