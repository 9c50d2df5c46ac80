"""Perception harness: synthetic sequences, perturbation, tracking and metrics."""
from __future__ import annotations

from .dataset import OUTPUTS, Harness, build_metric_dataset, evaluate_rows
from .geometry import Camera, DetectionFrame, corner_accuracy, iou
from .metrics import METRIC_NAMES, MetricVector, compute_metrics, pooled_metrics
from .perturb import (CHANNEL_LABELS, CHANNELS, FN_CHANNELS, LevelVector, latin_grid,
                      perturb_detections, perturb_sequence, sweep_grid)
from .synthetic import (NoiseSpec, Sequence, SequenceConfig, generate_sequences,
                        generate_synthetic_sequence)
from .tracker import ExternalTracker, TrackerParams, surrogate_mot

__all__ = [
    "OUTPUTS", "Harness", "build_metric_dataset", "evaluate_rows",
    "Camera", "DetectionFrame", "corner_accuracy", "iou",
    "METRIC_NAMES", "MetricVector", "compute_metrics", "pooled_metrics",
    "CHANNEL_LABELS", "CHANNELS", "FN_CHANNELS", "LevelVector", "latin_grid",
    "perturb_detections", "perturb_sequence", "sweep_grid",
    "NoiseSpec", "Sequence", "SequenceConfig", "generate_sequences", "generate_synthetic_sequence",
    "ExternalTracker", "TrackerParams", "surrogate_mot",
]
