from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

from core.errors import InvalidGeometry, OutOfRange

logger = logging.getLogger(__name__)

HU_MIN = -1024.0
HU_MAX = 3071.0
AIR_HU = HU_MIN


@dataclass(frozen=True, eq=False)
class CtVolume:
    """
    CT numbers on a regular grid. `values` is indexed [z, y, x] (x fastest in
    memory); voxel (i, j, k) sits at origin + (i*sx, j*sy, k*sz) mm.
    """

    values: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise InvalidGeometry(f"volume must be a non-empty 3D grid, got shape {arr.shape}")
        if arr.min() < HU_MIN or arr.max() > HU_MAX:
            raise OutOfRange(f"CT numbers must lie in [{HU_MIN:g}, {HU_MAX:g}] HU")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0.0:
            raise InvalidGeometry(f"voxel spacing must be 3 positive values, got {self.spacing}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> Tuple[int, int, int]:
        nz, ny, nx = self.values.shape
        return nx, ny, nz

    def center(self) -> np.ndarray:
        extent = (np.asarray(self.dims) - 1) * np.asarray(self.spacing)
        return np.asarray(self.origin) + extent / 2.0

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Bounding box of the voxel centres, in mm."""
        lo = np.asarray(self.origin)
        hi = lo + (np.asarray(self.dims) - 1) * np.asarray(self.spacing)
        return lo, hi


def hu_to_attenuation(ct: float, mu_water: float) -> float:
    """mu = (CT + 1024) / 1024 * mu_water."""
    if not HU_MIN <= ct <= HU_MAX:
        raise OutOfRange(f"CT number {ct} outside [{HU_MIN:g}, {HU_MAX:g}]")
    return (ct + 1024.0) / 1024.0 * mu_water


def attenuation(hu: np.ndarray, mu_water: float) -> np.ndarray:
    """Vectorised hu_to_attenuation for values already known to be in range."""
    return (np.asarray(hu, dtype=np.float64) + 1024.0) / 1024.0 * mu_water


def sample_hu(volume: CtVolume, positions: np.ndarray) -> np.ndarray:
    """
    Trilinear CT numbers at (n, 3) mm positions. Positions outside the
    voxel-centre bounding box read as air.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    idx = (pos - np.asarray(volume.origin)) / np.asarray(volume.spacing)
    upper = np.asarray(volume.dims, dtype=np.float64) - 1.0
    inside = np.all((idx >= 0.0) & (idx <= upper), axis=1)

    out = np.full(pos.shape[0], AIR_HU)
    if np.any(inside):
        coords = idx[inside][:, ::-1].T  # (z, y, x) order
        out[inside] = ndimage.map_coordinates(
            volume.values, coords, order=1, mode="nearest", output=np.float64
        )
    return out


def trilinear_sample(volume: CtVolume, position: Sequence[float]) -> float:
    return float(sample_hu(volume, np.asarray(position, dtype=np.float64))[0])
