from __future__ import annotations

"""
Synthetic confidence maps with known ground truth.

A map is a Gaussian ridge over the exact distance d to a reference curve,
peak * exp(-d^2 / (2 sigma^2)), plus seeded Gaussian background noise,
clamped to [0, 1]. Random draws come from a counter-based Philox generator so
fixtures are reproducible across platforms.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

import env
from config import SynthConfig
from core.errors import OutOfRange
from core.metrics import distance_to_polyline
from core.types import Circle, ConfidenceMap, Polyline

logger = logging.getLogger(__name__)

ROWS_PER_BLOCK = 32


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class Square:
    """Occluded square: top-left pixel (x0, y0) and side length, all in pixels."""
    x0: int
    y0: int
    side: int


def _pixel_grid(rows: np.ndarray, width: int) -> np.ndarray:
    ys, xs = np.meshgrid(rows.astype(np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel()])


def _distance_field(size: Tuple[int, int], distance: Callable[[np.ndarray], np.ndarray],
                    threads: Optional[int]) -> np.ndarray:
    width, height = size
    out = np.empty((height, width))
    blocks = [np.arange(lo, min(lo + ROWS_PER_BLOCK, height)) for lo in range(0, height, ROWS_PER_BLOCK)]

    def run(rows: np.ndarray) -> None:
        out[rows] = distance(_pixel_grid(rows, width)).reshape(rows.size, width)

    with ThreadPoolExecutor(max_workers=threads or env.DEEPMORPH_THREADS) as pool:
        list(pool.map(run, blocks))
    return out


def _ridge(dist: np.ndarray, config: SynthConfig) -> ConfidenceMap:
    values = config.peak_value * np.exp(-(dist * dist) / (2.0 * config.ridge_sigma ** 2))
    if config.background_noise_sigma > 0.0:
        values = values + config.background_noise_sigma * make_rng(config.seed).standard_normal(dist.shape)
    return ConfidenceMap(np.clip(values, 0.0, 1.0))


def _check_size(size: Tuple[int, int]) -> Tuple[int, int]:
    width, height = (int(s) for s in size)
    if width < 1 or height < 1:
        raise OutOfRange(f"image size must be positive, got {size}")
    return width, height


def confmap_from_outline(
    outline: Polyline,
    size: Tuple[int, int],
    config: SynthConfig = SynthConfig(),
    threads: Optional[int] = None,
) -> ConfidenceMap:
    size = _check_size(size)
    v = outline.vertices
    if v[:, 0].min() < 0 or v[:, 1].min() < 0 or v[:, 0].max() > size[0] - 1 or v[:, 1].max() > size[1] - 1:
        logger.warning("outline extends beyond the %dx%d image", *size)
    dist = _distance_field(size, lambda xy: distance_to_polyline(xy, outline), threads)
    return _ridge(dist, config)


def confmap_from_circle(
    circle: Circle,
    size: Tuple[int, int],
    config: SynthConfig = SynthConfig(),
    threads: Optional[int] = None,
) -> ConfidenceMap:
    """Ridge over the exact distance | |p - c| - r | to a circle."""
    size = _check_size(size)

    def distance(xy: np.ndarray) -> np.ndarray:
        return np.abs(np.hypot(xy[:, 0] - circle.cx, xy[:, 1] - circle.cy) - circle.r)

    return _ridge(_distance_field(size, distance, threads), config)


def occlude_squares(
    cmap: ConfidenceMap,
    n_squares: int,
    side_range: Tuple[int, int],
    seed: int,
) -> Tuple[ConfidenceMap, List[Square]]:
    """Zero out `n_squares` random axis-aligned squares lying fully inside the image."""
    if n_squares < 0:
        raise ValueError("n_squares must be >= 0")
    lo, hi = (int(s) for s in side_range)
    if not 1 <= lo <= hi <= min(cmap.width, cmap.height):
        raise OutOfRange(f"side range {side_range} does not fit a {cmap.width}x{cmap.height} map")

    rng = make_rng(seed)
    values = np.array(cmap.values, copy=True)
    squares: List[Square] = []
    for _ in range(n_squares):
        side = int(rng.integers(lo, hi, endpoint=True))
        x0 = int(rng.integers(0, cmap.width - side, endpoint=True))
        y0 = int(rng.integers(0, cmap.height - side, endpoint=True))
        values[y0:y0 + side, x0:x0 + side] = 0.0
        squares.append(Square(x0, y0, side))
    return ConfidenceMap(values), squares
