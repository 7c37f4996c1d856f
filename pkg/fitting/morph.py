from __future__ import annotations

"""
Shape-model fit to a confidence map.

1. threshold the map and register the model mean onto the foreground with
   restarted CPD (pose initialisation, coefficients zero)
2. repeat: move every point to the confidence maximum along its normal
   profile, then regularise the proposal with the PDM constraint
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from config import MorphConfig
from core.errors import DegenerateShape, InsufficientForeground, ShapeMismatch
from core.foreground import threshold_foreground
from core.types import ConfidenceMap, PointSet
from events import EventBus, FitEvent, FitEventType, publish
from fitting.cpd import cpd_register_robust
from fitting.pdm import (
    PointDistributionModel,
    ShapeCoefficients,
    as_points,
    constrain,
    project,
    reconstruct,
)
from fitting.transform import SimilarityTransform2D, similarity_procrustes

logger = logging.getLogger(__name__)

# inner pose / coefficient alternation inside constrain_shape
POSE_ROUNDS = 50
POSE_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class ShapeInstance:
    points: np.ndarray  # 2N vector in image coordinates
    pose: SimilarityTransform2D
    coefficients: ShapeCoefficients

    @property
    def xy(self) -> np.ndarray:
        return as_points(self.points)


@dataclass(frozen=True, eq=False)
class FitResult:
    shape: ShapeInstance
    iterations_used: int
    converged: bool
    per_iteration_movement: List[float] = field(default_factory=list)

    @property
    def final_movement(self) -> float:
        return self.per_iteration_movement[-1] if self.per_iteration_movement else 0.0


def _instance(model: PointDistributionModel, pose: SimilarityTransform2D, b: ShapeCoefficients) -> ShapeInstance:
    return ShapeInstance(pose.apply(as_points(reconstruct(model, b))).ravel(), pose, b)


# -------------------------
# Initialisation
# -------------------------
def _most_confident(cmap: ConfidenceMap, fg: PointSet, limit: int) -> PointSet:
    """The `limit` highest-confidence foreground pixels, kept in row-major order; ties keep the earlier pixel."""
    if len(fg) <= limit:
        return fg
    xy = fg.points
    conf = cmap.values[xy[:, 1].astype(int), xy[:, 0].astype(int)]
    keep = np.sort(np.argsort(-conf, kind="stable")[:limit])
    return PointSet(xy[keep])


def initialize_shape(
    model: PointDistributionModel,
    cmap: ConfidenceMap,
    config: MorphConfig = MorphConfig(),
    bus: Optional[EventBus] = None,
    threads: Optional[int] = None,
) -> ShapeInstance:
    fg = threshold_foreground(cmap, config.tau)
    if len(fg) < model.n_points:
        raise InsufficientForeground(
            f"{len(fg)} foreground pixels for a model with {model.n_points} points"
        )
    targets = _most_confident(cmap, fg, config.init_target_points)
    logger.info("pose initialisation: %d foreground pixels, %d used", len(fg), len(targets))
    mean = PointSet(as_points(model.mean))
    result = cpd_register_robust(mean, targets, config.cpd, bus=bus, threads=threads)
    b = ShapeCoefficients(np.zeros(model.n_modes))
    return _instance(model, result.transform, b)


# -------------------------
# Profile search
# -------------------------
def estimate_normals(shape: np.ndarray, closed: bool) -> np.ndarray:
    """
    Unit normals, perpendicular to the chord p[i-1] -> p[i+1], pointing to
    the left of the traversal direction: (dx, dy) -> (-dy, dx).
    """
    pts = as_points(shape)
    n = pts.shape[0]
    if n < 3:
        raise DegenerateShape("normals need at least 3 points")
    if closed:
        chords = np.roll(pts, -1, axis=0) - np.roll(pts, 1, axis=0)
    else:
        chords = np.empty_like(pts)
        chords[1:-1] = pts[2:] - pts[:-2]
        chords[0] = pts[1] - pts[0]
        chords[-1] = pts[-1] - pts[-2]
    length = np.hypot(chords[:, 0], chords[:, 1])
    if np.any(length == 0.0):
        raise DegenerateShape("zero-length chord while estimating normals")
    return np.column_stack([-chords[:, 1], chords[:, 0]]) / length[:, None]


def sample_bilinear(cmap: ConfidenceMap, xy: np.ndarray) -> np.ndarray:
    """Bilinear confidence at (x, y) positions; positions outside the image read 0."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    inside = (
        (xy[:, 0] >= 0.0) & (xy[:, 0] <= cmap.width - 1)
        & (xy[:, 1] >= 0.0) & (xy[:, 1] <= cmap.height - 1)
    )
    out = np.zeros(xy.shape[0])
    if np.any(inside):
        coords = np.vstack([xy[inside, 1], xy[inside, 0]])
        out[inside] = ndimage.map_coordinates(cmap.values, coords, order=1, mode="nearest")
    return out


def _profile_offsets(half_length: float, step: float) -> np.ndarray:
    """k = 0, -1, 1, -2, 2, ...; argmax over this order applies the tie-break."""
    k_max = int(np.floor(half_length / step))
    order = [0]
    for k in range(1, k_max + 1):
        order += [-k, k]
    return np.asarray(order, dtype=np.float64)


def profile_search(
    cmap: ConfidenceMap,
    point: Tuple[float, float],
    normal: Tuple[float, float],
    half_length: float,
    step: float,
) -> Tuple[float, float]:
    """Position of maximal confidence on point + k * step * normal, |k| <= half_length / step."""
    if half_length <= 0 or step <= 0:
        raise ValueError("half_length and step must be positive")
    ks = _profile_offsets(half_length, step)
    pos = np.asarray(point, dtype=np.float64) + (ks * step)[:, None] * np.asarray(normal, dtype=np.float64)
    best = int(np.argmax(sample_bilinear(cmap, pos)))
    return float(pos[best, 0]), float(pos[best, 1])


def _profile_search_all(cmap: ConfidenceMap, pts: np.ndarray, normals: np.ndarray, config: MorphConfig) -> np.ndarray:
    ks = _profile_offsets(config.profile_half_length, config.profile_step) * config.profile_step
    # (N, K, 2) candidate positions, sampled in one pass
    cand = pts[:, None, :] + ks[None, :, None] * normals[:, None, :]
    conf = sample_bilinear(cmap, cand.reshape(-1, 2)).reshape(cand.shape[:2])
    best = np.argmax(conf, axis=1)
    return cand[np.arange(pts.shape[0]), best]


# -------------------------
# Constraint
# -------------------------
def constrain_shape(
    model: PointDistributionModel,
    proposed: np.ndarray,
    reflected: bool = False,
) -> ShapeInstance:
    """
    Regularise a proposed shape with the PDM.

    Pose and coefficients are alternated: the current model instance is
    similarity-aligned to the proposal, the proposal is mapped into the model
    frame and projected, until the coefficients settle. The coefficients are
    then clipped to +-3 sqrt(lambda) and the instance is mapped back.
    `reflected` fixes the handedness of the pose.
    """
    vec = np.asarray(proposed, dtype=np.float64).ravel()
    if vec.size != model.mean.size:
        raise ShapeMismatch(f"proposed length {vec.size} != model length {model.mean.size}")
    target = as_points(vec)

    b = ShapeCoefficients(np.zeros(model.n_modes))
    for _ in range(POSE_ROUNDS):
        current = as_points(reconstruct(model, b))
        pose = similarity_procrustes(current, target, reflection=reflected)
        in_model = pose.inverse().apply(target).ravel()
        new_b = project(model, in_model)
        moved = float(np.max(np.abs(new_b.b - b.b)))
        b = new_b
        if moved < POSE_TOLERANCE:
            break

    return _instance(model, pose, constrain(model, b))


# -------------------------
# Fit loop
# -------------------------
def fit_shape(
    model: PointDistributionModel,
    cmap: ConfidenceMap,
    config: MorphConfig = MorphConfig(),
    bus: Optional[EventBus] = None,
    threads: Optional[int] = None,
) -> FitResult:
    """
    Profile search along the normals, then constrain, until the mean point
    movement of one iteration drops below convergence_tolerance.
    Confidence is read from the continuous map, never thresholded.
    """
    shape = initialize_shape(model, cmap, config, bus=bus, threads=threads)
    reflected = shape.pose.reflected
    movements: List[float] = []
    converged = False

    for it in range(1, config.max_iterations + 1):
        pts = shape.xy
        normals = estimate_normals(shape.points, config.closed)
        proposal = _profile_search_all(cmap, pts, normals, config)
        shape = constrain_shape(model, proposal, reflected=reflected)

        movement = float(np.mean(np.hypot(*(shape.xy - pts).T)))
        movements.append(movement)
        publish(bus, FitEvent(FitEventType.MORPH_ITERATION, it, movement))
        logger.debug("morph iteration %d: mean movement %.4f px", it, movement)
        if movement < config.convergence_tolerance:
            converged = True
            break

    logger.info("shape fit: %s after %d iterations (last movement %.3f px)",
                "converged" if converged else "stopped", len(movements), movements[-1])
    return FitResult(shape, len(movements), converged, movements)
