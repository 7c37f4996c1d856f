from __future__ import annotations

"""
2D similarity transforms: rotation, isotropic scale, translation and an
optional reflection about the x-axis (applied first).

    T(p) = s * R(rotation) * F * p + t,   F = diag(1, -1) if reflected else I
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from core.errors import DegenerateInput
from core.types import PointSet

_FLIP = np.diag([1.0, -1.0])


def wrap_angle(theta: float) -> float:
    """Map an angle into (-pi, pi]."""
    wrapped = math.atan2(math.sin(theta), math.cos(theta))
    return math.pi if wrapped <= -math.pi else wrapped


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class SimilarityTransform2D:
    rotation: float = 0.0
    scale: float = 1.0
    translation: Tuple[float, float] = (0.0, 0.0)
    reflected: bool = False

    def __post_init__(self) -> None:
        if not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise DegenerateInput(f"similarity scale must be positive, got {self.scale}")
        object.__setattr__(self, "rotation", wrap_angle(float(self.rotation)))
        object.__setattr__(self, "translation", (float(self.translation[0]), float(self.translation[1])))

    @classmethod
    def identity(cls) -> "SimilarityTransform2D":
        return cls()

    @classmethod
    def from_matrix(cls, linear: np.ndarray, translation: np.ndarray) -> "SimilarityTransform2D":
        """Decompose a 2x2 similarity matrix (possibly improper) plus translation."""
        det = float(np.linalg.det(linear))
        if det == 0.0:
            raise DegenerateInput("singular similarity matrix")
        scale = math.sqrt(abs(det))
        reflected = det < 0.0
        proper = linear / scale
        if reflected:
            proper = proper @ _FLIP
        theta = math.atan2(proper[1, 0], proper[0, 0])
        return cls(theta, scale, (float(translation[0]), float(translation[1])), reflected)

    def linear(self) -> np.ndarray:
        m = self.scale * rotation_matrix(self.rotation)
        return m @ _FLIP if self.reflected else m

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix."""
        out = np.eye(3)
        out[:2, :2] = self.linear()
        out[:2, 2] = self.translation
        return out

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return pts @ self.linear().T + np.asarray(self.translation)

    def inverse(self) -> "SimilarityTransform2D":
        inv = np.linalg.inv(self.linear())
        return SimilarityTransform2D.from_matrix(inv, -inv @ np.asarray(self.translation))

    def compose(self, first: "SimilarityTransform2D") -> "SimilarityTransform2D":
        """self after first: p -> self(first(p))."""
        lin = self.linear() @ first.linear()
        t = self.linear() @ np.asarray(first.translation) + np.asarray(self.translation)
        return SimilarityTransform2D.from_matrix(lin, t)


def apply_transform(t: SimilarityTransform2D, points: PointSet) -> PointSet:
    """T(p) for every point, order preserved."""
    return PointSet(t.apply(points.points))


def similarity_procrustes(
    source: np.ndarray,
    target: np.ndarray,
    reflection: bool = False,
    estimate_scale: bool = True,
) -> SimilarityTransform2D:
    """
    Least-squares similarity T minimising sum ||target_i - T(source_i)||^2.

    With `reflection` the source is mirrored about the x-axis first, so the
    returned transform has reflected=True.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 2)
    tgt = np.asarray(target, dtype=np.float64).reshape(-1, 2)
    if src.shape != tgt.shape:
        raise DegenerateInput(f"point count mismatch {src.shape} vs {tgt.shape}")
    if reflection:
        src = src @ _FLIP

    mu_s = src.mean(axis=0)
    mu_t = tgt.mean(axis=0)
    a = src - mu_s
    b = tgt - mu_t
    norm_a = float(np.sum(a * a))
    if norm_a <= 0.0:
        raise DegenerateInput("source points are all coincident")

    dot = float(np.sum(a * b))
    cross = float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))
    theta = math.atan2(cross, dot)
    scale = math.hypot(dot, cross) / norm_a if estimate_scale else 1.0
    if scale <= 0.0:
        raise DegenerateInput("target points are all coincident")

    rot = scale * rotation_matrix(theta)
    t = mu_t - rot @ mu_s
    return SimilarityTransform2D(theta, scale, (float(t[0]), float(t[1])), reflection)
