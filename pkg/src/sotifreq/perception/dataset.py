"""Perturbation datasets: level vectors in, tracked-output metrics out."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..shapley import PerturbationDataset
from .metrics import MetricVector, pooled_metrics
from .perturb import CHANNELS, LevelVector, latin_grid, perturb_sequence
from .tracker import ExternalTracker, TrackerParams, surrogate_mot

# dataset output columns and the MetricVector field behind each
OUTPUTS = {"fn": "fn_rate", "fp": "fp_rate", "ass_a": "ass_a", "loc_a": "loc_a",
           "det_a": "det_a", "hota": "hota", "det_acc_2d": "det_acc_2d"}


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SOTIF_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class Harness:
    """Base sequences plus the tracker that turns perturbed detections into tracks."""

    sequences: list
    tracker: object = None  # None -> surrogate; or an ExternalTracker
    params: TrackerParams = field(default_factory=TrackerParams)
    tau_iou: float = 0.5

    def track(self, d2, d3):
        if self.tracker is None:
            return surrogate_mot(d2, d3, self.params)
        return self.tracker(d2, d3)

    def evaluate(self, level: LevelVector, seed: int = 0,
                 depth_window: tuple[float, float] | None = None, min_run: int = 1) -> MetricVector:
        runs = []
        for i, seq in enumerate(self.sequences):
            d2, d3 = perturb_sequence(seq, level, seed=seed * 7907 + i)
            runs.append((self.track(d2, d3), seq.gt2d, seq.gt3d))
        return pooled_metrics(runs, self.tau_iou, depth_window, min_run)


def _eval_row(args):
    harness, row, seed = args
    return harness.evaluate(LevelVector.from_array(row), seed)


def evaluate_rows(harness: Harness, rows, seeds, workers: int | None = None) -> list[MetricVector]:
    workers = default_workers() if workers is None else workers
    jobs = [(harness, np.asarray(r, dtype=float), int(s)) for r, s in zip(rows, seeds)]
    if workers <= 1 or len(jobs) < 2:
        return [_eval_row(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_eval_row, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def build_metric_dataset(harness: Harness, grid=None, seed: int = 0, common_seed: bool = True,
                         workers: int | None = None) -> tuple[PerturbationDataset, list[MetricVector]]:
    """Evaluate every level vector of ``grid`` (default: 101-step Latin grid).

    With ``common_seed`` every row reuses the same perturbation seed, so rows
    differ only through their levels.
    """
    grid = latin_grid(101, seed) if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 2 or len(grid) == 0 or grid.shape[1] != len(CHANNELS):
        raise ValueError(f"grid must be a non-empty (N, {len(CHANNELS)}) array")
    _, first = np.unique(grid, axis=0, return_index=True)
    grid = grid[np.sort(first)]
    seeds = ([seed] * len(grid) if common_seed
             else [int(np.random.SeedSequence([seed, i]).generate_state(1)[0]) for i in range(len(grid))])
    metrics = evaluate_rows(harness, grid, seeds, workers)
    outputs = {name: np.array([getattr(m, f) for m in metrics], dtype=float) for name, f in OUTPUTS.items()}
    info = {"n_rows": int(len(grid)), "seed": int(seed), "common_seed": bool(common_seed),
            "n_sequences": len(harness.sequences), "tau_iou": harness.tau_iou,
            "tracker": "surrogate" if harness.tracker is None else "external"}
    return PerturbationDataset(grid, outputs, list(CHANNELS), info), metrics


__all__ = ["OUTPUTS", "Harness", "ExternalTracker", "build_metric_dataset", "evaluate_rows"]
