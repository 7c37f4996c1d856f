from __future__ import annotations

"""
Evaluation metrics: circle parameter RMSE and point-to-curve RMSE.
"""

from typing import Tuple

import numpy as np

from core.errors import DegenerateInput
from core.types import Circle, PointSet, Polyline

# point-segment pairs evaluated at once
PAIRS_PER_CHUNK = 2_000_000


def circle_param_rmse(estimate: Circle, truth: Circle) -> float:
    """Euclidean norm of (dcx, dcy, dr)."""
    return float(np.linalg.norm(estimate.as_array() - truth.as_array()))


def segment_distances(points: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """
    Exact distance of every point to every segment, shape (n_points, n_segments).
    """
    p = np.asarray(points, dtype=np.float64)[:, None, :]
    a = starts[None, :, :]
    ab = (ends - starts)[None, :, :]
    denom = np.sum(ab * ab, axis=2)
    t = np.sum((p - a) * ab, axis=2) / np.where(denom > 0.0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.sqrt(np.sum((p - closest) ** 2, axis=2))


def distance_to_polyline(points: np.ndarray, curve: Polyline) -> np.ndarray:
    """Minimum distance from each point to the polyline, evaluated in chunks."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    starts, ends = curve.segments()
    chunk = max(1, PAIRS_PER_CHUNK // starts.shape[0])
    out = np.empty(pts.shape[0], dtype=np.float64)
    for lo in range(0, pts.shape[0], chunk):
        hi = min(lo + chunk, pts.shape[0])
        out[lo:hi] = segment_distances(pts[lo:hi], starts, ends).min(axis=1)
    return out


def point_to_curve_rmse(points: PointSet, curve: Polyline) -> float:
    if len(points) == 0:
        raise DegenerateInput("point_to_curve_rmse needs at least one point")
    d = distance_to_polyline(points.points, curve)
    return float(np.sqrt(np.mean(d * d)))


def filter_in_beam(points: PointSet, center: Tuple[float, float], radius: float) -> PointSet:
    """Keep only points inside the circular beam cone (the disk-shaped detector area)."""
    offsets = points.points - np.asarray(center, dtype=np.float64)
    inside = np.sum(offsets * offsets, axis=1) <= radius * radius
    return PointSet(points.points[inside])
