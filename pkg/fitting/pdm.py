from __future__ import annotations

"""
Point distribution models.

A shape is a 2N vector [x1, y1, ..., xN, yN]. A model is the mean shape plus
M orthonormal modes p_i with eigenvalues lambda_i, so that

    x ~ mean + sum_i p_i b_i,    b_i = p_i . (x - mean)

Coefficients are regularised by clipping to +-3 sqrt(lambda_i).
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.errors import CoefficientMismatch, DegenerateShape, ShapeMismatch
from events import EventBus, FitEvent, FitEventType, publish
from fitting.transform import similarity_procrustes

logger = logging.getLogger(__name__)

CLIP_SIGMAS = 3.0
ORTHONORMAL_TOL = 1e-9
GPA_TOLERANCE = 1e-9
GPA_MAX_ROUNDS = 50
# eigenvalues below this fraction of the largest are treated as zero
RANK_TOLERANCE = 1e-10


def shape_vector(coords: Sequence[float]) -> np.ndarray:
    """Validate and copy a 2N shape vector (even length >= 4, finite)."""
    vec = np.asarray(coords, dtype=np.float64).ravel().copy()
    if vec.size < 4 or vec.size % 2:
        raise ShapeMismatch(f"shape vector must have even length >= 4, got {vec.size}")
    if not np.all(np.isfinite(vec)):
        raise ShapeMismatch("shape vector has non-finite coordinates")
    return vec


def as_points(shape: np.ndarray) -> np.ndarray:
    return np.asarray(shape, dtype=np.float64).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class ShapeCoefficients:
    b: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64).ravel().copy())

    def __len__(self) -> int:
        return int(self.b.size)


@dataclass(frozen=True, eq=False)
class PointDistributionModel:
    mean: np.ndarray
    modes: np.ndarray        # (M, 2N), one mode per row
    eigenvalues: np.ndarray  # (M,), descending

    def __post_init__(self) -> None:
        mean = shape_vector(self.mean)
        modes = np.atleast_2d(np.asarray(self.modes, dtype=np.float64)).copy()
        lam = np.asarray(self.eigenvalues, dtype=np.float64).ravel().copy()

        m = lam.size
        if not 1 <= m <= mean.size or modes.shape != (m, mean.size):
            raise ShapeMismatch(f"modes {modes.shape} / eigenvalues {lam.shape} do not fit mean of length {mean.size}")
        if np.any(lam < 0.0) or np.any(np.diff(lam) > 0.0):
            raise DegenerateShape("eigenvalues must be non-negative and non-increasing")
        gram = modes @ modes.T
        if np.max(np.abs(gram - np.eye(m))) > ORTHONORMAL_TOL:
            raise DegenerateShape("modes are not orthonormal")

        for name, arr in (("mean", mean), ("modes", modes), ("eigenvalues", lam)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_points(self) -> int:
        return self.mean.size // 2

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    def mode_bounds(self) -> np.ndarray:
        return CLIP_SIGMAS * np.sqrt(self.eigenvalues)


# -------------------------
# Alignment
# -------------------------
def _normalise(points: np.ndarray) -> np.ndarray:
    centered = points - points.mean(axis=0)
    size = float(np.sqrt(np.sum(centered * centered)))
    if size == 0.0:
        raise DegenerateShape("shape has all points coincident")
    return centered / size


def _align_all(shapes: List[np.ndarray], reference: np.ndarray) -> List[np.ndarray]:
    return [similarity_procrustes(s, reference).apply(s) for s in shapes]


def align_training_shapes(
    shapes: Sequence[Sequence[float]],
    bus: Optional[EventBus] = None,
) -> Tuple[List[np.ndarray], np.ndarray]:
    """
    Generalised Procrustes alignment.

    Every shape is similarity-aligned to the current mean; the mean is
    re-centred, rescaled to unit centroid size and rotated back onto the
    first reference, until it moves less than GPA_TOLERANCE or GPA_MAX_ROUNDS
    pass. Returns the shapes aligned to the final mean, and the mean.
    """
    if len(shapes) < 2:
        raise ShapeMismatch("need at least 2 training shapes")
    vectors = [shape_vector(s) for s in shapes]
    if len({v.size for v in vectors}) != 1:
        raise ShapeMismatch("training shapes have different point counts")
    pts = [as_points(v) for v in vectors]
    for p in pts:
        _normalise(p)

    reference = _normalise(pts[0])
    mean = reference
    for rnd in range(GPA_MAX_ROUNDS):
        aligned = _align_all(pts, mean)
        new_mean = _normalise(np.mean(aligned, axis=0))
        new_mean = _normalise(similarity_procrustes(new_mean, reference).apply(new_mean))
        change = float(np.linalg.norm(new_mean - mean))
        mean = new_mean
        publish(bus, FitEvent(FitEventType.GPA_ROUND, rnd, change))
        logger.debug("procrustes round %d: mean moved %.3e", rnd, change)
        if change < GPA_TOLERANCE:
            break

    aligned = _align_all(pts, mean)
    return [a.ravel() for a in aligned], mean.ravel()


# -------------------------
# Model construction
# -------------------------
def build_pdm(aligned: Sequence[Sequence[float]], variance_fraction: float = 0.95) -> PointDistributionModel:
    """
    Sample mean and covariance (divided by S - 1), eigen-decomposed via SVD of
    the centred data. Keeps the smallest M whose eigenvalues explain at least
    `variance_fraction` of the total, capped at the numerical rank.
    """
    if not 0.0 < variance_fraction <= 1.0:
        raise ValueError(f"variance_fraction must lie in (0, 1], got {variance_fraction}")
    if len(aligned) < 2:
        raise ShapeMismatch("need at least 2 shapes to build a model")
    vectors = [shape_vector(s) for s in aligned]
    if len({v.size for v in vectors}) != 1:
        raise ShapeMismatch("training shapes have different point counts")

    data = np.vstack(vectors)
    mean = data.mean(axis=0)
    centered = data - mean
    _, sv, vt = np.linalg.svd(centered / np.sqrt(data.shape[0] - 1), full_matrices=False)
    lam = sv * sv
    total = float(lam.sum())
    if total <= 0.0:
        raise DegenerateShape("training shapes have zero total variance")

    rank = int(np.sum(lam > RANK_TOLERANCE * lam[0]))
    cumulative = np.cumsum(lam) / total
    m = int(np.searchsorted(cumulative, variance_fraction - 1e-12) + 1)
    m = max(1, min(m, rank))

    modes = vt[:m].copy()
    for row in modes:
        nz = np.flatnonzero(np.abs(row) > 1e-12 * np.abs(row).max())
        if nz.size and row[nz[0]] < 0.0:
            row *= -1.0

    logger.info("built PDM: %d points, %d of %d modes, %.4f of variance",
                mean.size // 2, m, rank, float(cumulative[m - 1]))
    return PointDistributionModel(mean, modes, lam[:m])


def project(model: PointDistributionModel, shape: Sequence[float]) -> ShapeCoefficients:
    vec = np.asarray(shape, dtype=np.float64).ravel()
    if vec.size != model.mean.size:
        raise ShapeMismatch(f"shape length {vec.size} != model length {model.mean.size}")
    return ShapeCoefficients(model.modes @ (vec - model.mean))


def reconstruct(model: PointDistributionModel, b: ShapeCoefficients) -> np.ndarray:
    if len(b) != model.n_modes:
        raise CoefficientMismatch(f"got {len(b)} coefficients for {model.n_modes} modes")
    return model.mean + model.modes.T @ b.b


def constrain(model: PointDistributionModel, b: ShapeCoefficients) -> ShapeCoefficients:
    if len(b) != model.n_modes:
        raise CoefficientMismatch(f"got {len(b)} coefficients for {model.n_modes} modes")
    bound = model.mode_bounds()
    return ShapeCoefficients(np.clip(b.b, -bound, bound))
