from __future__ import annotations

"""
Domain types shared across the fitting, rendering and synthesis packages.

Pixel convention: (x, y) with x = column index, y = row index, origin at the
top-left pixel, pixel centers at integer coordinates.
"""

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple

import numpy as np

from core.errors import DegenerateInput, OutOfRange


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    """Segmentation confidence O(x, y); `values` is stored as an (height, width) grid."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = _frozen_array(self.values)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DegenerateInput(f"confidence map must be a non-empty 2D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise OutOfRange("confidence values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_row_major(cls, width: int, height: int, values: Sequence[float]) -> "ConfidenceMap":
        flat = np.asarray(values, dtype=np.float64)
        if flat.size != width * height:
            raise DegenerateInput(f"expected {width * height} values, got {flat.size}")
        return cls(flat.reshape(height, width))

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    def at(self, x: int, y: int) -> float:
        return float(self.values[y, x])


@dataclass(frozen=True, eq=False)
class PointSet:
    """Ordered (x, y) points in pixel units; may be empty."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self) -> None:
        arr = np.asarray(self.points, dtype=np.float64)
        if arr.size == 0:
            arr = np.zeros((0, 2))
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise DegenerateInput(f"points must have shape (n, 2), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DegenerateInput("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen_array(arr))

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[float, float]]) -> "PointSet":
        return cls(np.array(list(pairs), dtype=np.float64).reshape(-1, 2))

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def xs(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def ys(self) -> np.ndarray:
        return self.points[:, 1]


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.cx, self.cy, self.r)):
            raise DegenerateInput("circle parameters must be finite")
        if self.r <= 0.0:
            raise DegenerateInput(f"circle radius must be positive, got {self.r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.r], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Polyline:
    """Reference curve: >= 2 vertices, consecutive vertices distinct."""

    vertices: np.ndarray
    closed: bool = False

    def __post_init__(self) -> None:
        arr = np.asarray(self.vertices, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
            raise DegenerateInput(f"polyline needs at least 2 vertices of shape (n, 2), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DegenerateInput("polyline vertices must be finite")
        steps = np.diff(arr, axis=0)
        if np.any(np.all(steps == 0.0, axis=1)):
            raise DegenerateInput("consecutive polyline vertices must be distinct")
        object.__setattr__(self, "vertices", _frozen_array(arr))

    def __len__(self) -> int:
        return int(self.vertices.shape[0])

    def segments(self) -> Tuple[np.ndarray, np.ndarray]:
        """Segment start and end points, including the closing segment for closed curves."""
        starts = self.vertices[:-1]
        ends = self.vertices[1:]
        if self.closed and not np.array_equal(self.vertices[0], self.vertices[-1]):
            starts = np.vstack([starts, self.vertices[-1:]])
            ends = np.vstack([ends, self.vertices[:1]])
        return starts, ends
