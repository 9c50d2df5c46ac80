"""Detection and tracking metrics at a single IoU threshold.

``hota`` here is HOTA-lite: the geometric mean of DetA and AssA at one
threshold (0.5 by default) instead of the integral over 19 thresholds.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .. import kernels
from .geometry import check_aligned, corner_accuracy, iou

METRIC_NAMES = ("fn_rate", "fp_rate", "det_acc_2d", "det_acc_3d", "det_a", "ass_a", "loc_a", "hota")


@dataclass(frozen=True)
class MetricVector:
    fn_rate: float
    fp_rate: float
    det_acc_2d: float | None
    det_acc_3d: float | None
    det_a: float
    ass_a: float
    loc_a: float
    hota: float
    tp: int = 0
    fn: int = 0
    fp: int = 0
    fn_frames: int = 0
    n_frames: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_NAMES}


@dataclass
class _Tally:
    tp: int = 0
    fn: int = 0
    fp: int = 0
    fn_frames: int = 0
    n_frames: int = 0
    acc_sum: float = 0.0
    iou_sum: float = 0.0


def _match_sequence(tracks, gt, tau, depth=None, depth_window=None, min_run=1):
    """Per-frame greedy matches, plus tallies for the counting pass.

    A frame counts as an FN frame when some ground-truth object (inside the
    depth window, if given) has gone unmatched for ``min_run`` consecutive
    frames up to and including it.
    """
    tally = _Tally()
    run: Counter = Counter()
    pairs = []  # (gt id, track id) for each TP
    gt_count: Counter = Counter()
    tr_count: Counter = Counter()
    for k, (tr, g) in enumerate(zip(tracks, gt)):
        tally.n_frames += 1
        gt_count.update(int(i) for i in g.ids)
        tr_count.update(int(i) for i in tr.ids)
        m = np.zeros((0, 2), dtype=np.int64)
        if len(tr) and len(g):
            ious = iou(g.boxes, tr.boxes)
            m = kernels.greedy_match(ious, tau)
        matched_gt = set()
        for gi, ti in m:
            matched_gt.add(int(gi))
            pairs.append((int(g.ids[gi]), int(tr.ids[ti])))
            tally.iou_sum += float(ious[gi, ti])
        if len(m):
            tally.acc_sum += float(corner_accuracy(tr.boxes[m[:, 1]], g.boxes[m[:, 0]]).sum())
        tally.tp += len(m)
        tally.fn += len(g) - len(m)
        tally.fp += len(tr) - len(m)
        present = set(int(i) for i in g.ids)
        for j, gid in enumerate(g.ids):
            gid = int(gid)
            run[gid] = 0 if j in matched_gt else run[gid] + 1
        for gid in [i for i in run if i not in present]:
            del run[gid]
        missed = [int(g.ids[j]) for j in range(len(g)) if j not in matched_gt and run[int(g.ids[j])] >= min_run]
        if depth_window is not None and depth is not None:
            lo, hi = depth_window
            z = depth[k]
            missed = [i for i in missed if lo <= z.get(i, math.nan) < hi]
        if missed:
            tally.fn_frames += 1
    return tally, pairs, gt_count, tr_count


def _assemble(tally: _Tally, pairs, gt_count, tr_count, dim: int) -> MetricVector:
    tp, fn, fp = tally.tp, tally.fn, tally.fp
    fn_rate = fn / (tp + fn) if tp + fn else 0.0
    fp_rate = fp / (tp + fp) if tp + fp else 0.0
    det_a = tp / (tp + fn + fp) if tp + fn + fp else 1.0
    if tp:
        tpa = Counter(pairs)
        ass = sum(tpa[pr] / (gt_count[pr[0]] + tr_count[pr[1]] - tpa[pr]) for pr in pairs) / tp
        loc = tally.iou_sum / tp
        acc = tally.acc_sum / tp
    elif tp + fn + fp == 0:
        ass, loc, acc = 1.0, 1.0, 1.0
    else:
        ass, loc, acc = 0.0, 0.0, 0.0
    hota = math.sqrt(det_a * ass)
    return MetricVector(fn_rate, fp_rate, acc if dim == 4 else None, acc if dim == 6 else None,
                        det_a, ass, loc, hota, tp, fn, fp, tally.fn_frames, tally.n_frames)


def _depths(gt3d):
    return [{int(i): float(b[2]) for i, b in zip(f.ids, f.boxes)} for f in gt3d]


def compute_metrics(tracks, gt, tau_iou: float = 0.5, gt3d=None,
                    depth_window: tuple[float, float] | None = None, min_run: int = 1) -> MetricVector:
    """Metrics of ``tracks`` against ``gt`` (both 2D or both 3D frame lists).

    With ``gt3d`` and ``depth_window`` the FN-frame count only considers
    ground-truth objects whose depth falls inside the window; ``min_run``
    only counts misses that have lasted that many frames.
    """
    tracks, gt = list(tracks), list(gt)
    check_aligned(tracks, gt)
    dim = gt[0].boxes.shape[1] if gt else 4
    depth = _depths(gt3d) if gt3d is not None else None
    return _assemble(*_match_sequence(tracks, gt, tau_iou, depth, depth_window, min_run), dim)


def pooled_metrics(pairs_of_sequences, tau_iou: float = 0.5, depth_window=None,
                   min_run: int = 1) -> MetricVector:
    """Metrics of several (tracks, gt2d, gt3d) sequences pooled as one.

    Track and object ids are namespaced per sequence so association counts
    never mix sequences.
    """
    total = _Tally()
    all_pairs = []
    gt_count: Counter = Counter()
    tr_count: Counter = Counter()
    dim = 4
    for s, (tracks, gt, gt3d) in enumerate(pairs_of_sequences):
        tracks, gt = list(tracks), list(gt)
        check_aligned(tracks, gt)
        if gt:
            dim = gt[0].boxes.shape[1]
        depth = _depths(gt3d) if gt3d is not None else None
        t, p, gc, tc = _match_sequence(tracks, gt, tau_iou, depth, depth_window, min_run)
        for f in ("tp", "fn", "fp", "fn_frames", "n_frames", "acc_sum", "iou_sum"):
            setattr(total, f, getattr(total, f) + getattr(t, f))
        all_pairs += [((s, a), (s, b)) for a, b in p]
        gt_count.update({(s, k): v for k, v in gc.items()})
        tr_count.update({(s, k): v for k, v in tc.items()})
    return _assemble(total, all_pairs, gt_count, tr_count, dim)
