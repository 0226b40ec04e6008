#!/usr/bin/env python3
"""
Shape metrics between an estimated and a ground-truth point cloud.

completeness: fraction of GT points with an estimate within tau
accuracy:     fraction of estimated points with a GT point within tau
rmse:         over matched GT points, of their nearest-estimate distance
"""
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInputError


@dataclass(frozen=True)
class ShapeMetrics:
    completeness: float
    accuracy: float
    f1: float
    rmse: float
    threshold: float


def nearest_distances(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Distance from every source point to its nearest target point."""
    distances, _ = cKDTree(target).query(source, k=1)
    return distances


def shape_metrics(estimated: np.ndarray, ground_truth: np.ndarray, threshold: float) -> ShapeMetrics:
    estimated = np.asarray(estimated, dtype=np.float64).reshape(-1, 3)
    ground_truth = np.asarray(ground_truth, dtype=np.float64).reshape(-1, 3)
    if estimated.shape[0] == 0 or ground_truth.shape[0] == 0:
        raise DegenerateInputError("shape metrics need two non-empty point clouds")
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")

    gt_to_est = nearest_distances(ground_truth, estimated)
    est_to_gt = nearest_distances(estimated, ground_truth)
    matched = gt_to_est <= threshold
    completeness = float(np.mean(matched))
    accuracy = float(np.mean(est_to_gt <= threshold))
    total = completeness + accuracy
    f1 = 2.0 * completeness * accuracy / total if total > 0 else 0.0
    rmse = float(np.sqrt(np.mean(gt_to_est[matched] ** 2))) if matched.any() else 0.0
    return ShapeMetrics(completeness=completeness, accuracy=accuracy, f1=f1, rmse=rmse,
                        threshold=float(threshold))


def surface_rmse(estimated: np.ndarray, ground_truth: np.ndarray) -> float:
    """RMS nearest-estimate distance over all GT points (no matching radius)."""
    d = nearest_distances(np.asarray(ground_truth).reshape(-1, 3), np.asarray(estimated).reshape(-1, 3))
    return float(np.sqrt(np.mean(d ** 2)))
