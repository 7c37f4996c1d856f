from __future__ import annotations

"""
Ray-cast radiograph simulation.

For every detector pixel a ray runs from the focal point to the pixel's 3D
position. The total attenuation A = sum mu_i dx along the ray is turned into
an intensity exp(-A), the lowest-attenuation `saturation_fraction` of pixels
is clamped to the maximum intensity and the result is mapped linearly to
[gray_min, gray_max].
"""

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

import env
from config import RenderConfig
from core.errors import DegenerateGeometry, InvalidGeometry
from drr.volume import CtVolume, attenuation, sample_hu
from events import EventBus, FitEvent, FitEventType, publish

logger = logging.getLogger(__name__)

AXIS_TOL = 1e-9
# samples evaluated per row block
BLOCK_SAMPLES = 4_000_000

AP_PRESET = "ap-1000mm"
AP_SOURCE_DETECTOR_MM = 1000.0
AP_PIXEL_PITCH_MM = 0.65
AP_IMAGE_SIZE = (448, 448)


def _vec3(v: Sequence[float], name: str) -> Tuple[float, float, float]:
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.size != 3 or not np.all(np.isfinite(arr)):
        raise InvalidGeometry(f"{name} must be a finite 3D vector, got {v}")
    return float(arr[0]), float(arr[1]), float(arr[2])


@dataclass(frozen=True)
class CameraGeometry:
    focal_point: Tuple[float, float, float]
    detector_center: Tuple[float, float, float]
    detector_u: Tuple[float, float, float]
    detector_v: Tuple[float, float, float]
    pixel_pitch: float
    image_size: Tuple[int, int]  # (W, H)
    circular_mask: bool = False

    def __post_init__(self) -> None:
        for name in ("focal_point", "detector_center", "detector_u", "detector_v"):
            object.__setattr__(self, name, _vec3(getattr(self, name), name))
        u, v = np.asarray(self.detector_u), np.asarray(self.detector_v)
        if abs(float(u @ v)) > AXIS_TOL:
            raise InvalidGeometry("detector axes are not orthogonal")
        if abs(np.linalg.norm(u) - 1.0) > AXIS_TOL or abs(np.linalg.norm(v) - 1.0) > AXIS_TOL:
            raise InvalidGeometry("detector axes must be unit vectors")
        if not self.pixel_pitch > 0:
            raise InvalidGeometry("pixel_pitch must be > 0")
        w, h = (int(s) for s in self.image_size)
        if w < 1 or h < 1:
            raise InvalidGeometry(f"image size must be positive, got {self.image_size}")
        object.__setattr__(self, "image_size", (w, h))
        offset = np.asarray(self.focal_point) - np.asarray(self.detector_center)
        if abs(float(offset @ self.normal())) <= AXIS_TOL:
            raise InvalidGeometry("focal point lies on the detector plane")

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    def normal(self) -> np.ndarray:
        return np.cross(self.detector_u, self.detector_v)

    def pixel_positions(self, rows: np.ndarray) -> np.ndarray:
        """3D positions (len(rows), W, 3) of the pixel centres in the given rows."""
        cols = (np.arange(self.width) - (self.width - 1) / 2.0) * self.pixel_pitch
        offs = (np.asarray(rows, dtype=np.float64) - (self.height - 1) / 2.0) * self.pixel_pitch
        u = np.asarray(self.detector_u)
        v = np.asarray(self.detector_v)
        return (
            np.asarray(self.detector_center)[None, None, :]
            + cols[None, :, None] * u[None, None, :]
            + offs[:, None, None] * v[None, None, :]
        )


def ap_camera(
    center: Sequence[float],
    image_size: Tuple[int, int] = AP_IMAGE_SIZE,
    pixel_pitch: float = AP_PIXEL_PITCH_MM,
    source_detector: float = AP_SOURCE_DETECTOR_MM,
    circular_mask: bool = False,
) -> CameraGeometry:
    """
    Anterior-posterior view along +y through `center`: focal point and
    detector each half the source-detector distance away, u = +x, v = -z.
    """
    c = np.asarray(_vec3(center, "center"))
    half = source_detector / 2.0
    return CameraGeometry(
        focal_point=tuple(c - [0.0, half, 0.0]),
        detector_center=tuple(c + [0.0, half, 0.0]),
        detector_u=(1.0, 0.0, 0.0),
        detector_v=(0.0, 0.0, -1.0),
        pixel_pitch=pixel_pitch,
        image_size=image_size,
        circular_mask=circular_mask,
    )


def circular_mask(width: int, height: int) -> np.ndarray:
    """True inside the disk inscribed in the image."""
    ys, xs = np.mgrid[0:height, 0:width]
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    r = min(width, height) / 2.0
    return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r


# -------------------------
# Ray casting
# -------------------------
def _box_sample_range(volume: CtVolume, starts: np.ndarray, delta: np.ndarray,
                      n_samples: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per ray, the first sample index and the sample count whose midpoints may
    fall inside the volume box (slab test, widened by one sample each side).
    Samples outside the range read air, which attenuates nothing.
    """
    lo, hi = volume.bounds()
    parallel = delta == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t_a = (lo - starts) / delta
        t_b = (hi - starts) / delta
    within = (starts >= lo) & (starts <= hi)
    t_near = np.where(parallel, np.where(within, -np.inf, np.inf), np.minimum(t_a, t_b))
    t_far = np.where(parallel, np.where(within, np.inf, -np.inf), np.maximum(t_a, t_b))
    t0 = np.maximum(t_near.max(axis=1), 0.0)
    t1 = np.minimum(t_far.min(axis=1), 1.0)

    first = np.clip(np.floor(t0 * n_samples - 0.5) - 1, 0, n_samples).astype(np.int64)
    last = np.clip(np.ceil(t1 * n_samples - 0.5) + 1, -1, n_samples - 1).astype(np.int64)
    count = np.where(t0 <= t1, np.maximum(last - first + 1, 0), 0)
    return first, count


def _cast_rays(volume: CtVolume, starts: np.ndarray, ends: np.ndarray, n_samples: int, mu_water: float) -> np.ndarray:
    delta = ends - starts
    length = np.linalg.norm(delta, axis=1)
    first, count = _box_sample_range(volume, starts, delta, n_samples)
    total = np.zeros(starts.shape[0])
    span = int(count.max()) if count.size else 0
    if span == 0:
        return total

    offs = np.arange(span)
    ray, j = np.nonzero(offs[None, :] < count[:, None])
    frac = (first[ray] + j + 0.5) / n_samples
    pos = starts[ray] + frac[:, None] * delta[ray]
    mu = attenuation(sample_hu(volume, pos), mu_water)
    total = np.bincount(ray, weights=mu, minlength=starts.shape[0])
    return total * (length / n_samples)


def cast_ray(
    volume: CtVolume,
    start: Sequence[float],
    end: Sequence[float],
    n_samples: int,
    mu_water: float,
) -> float:
    """Total attenuation along [start, end] with midpoint sampling."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    s = np.asarray(start, dtype=np.float64).reshape(1, 3)
    e = np.asarray(end, dtype=np.float64).reshape(1, 3)
    if np.array_equal(s, e):
        raise InvalidGeometry("ray start and end coincide")
    return float(_cast_rays(volume, s, e, n_samples, mu_water)[0])


def render_attenuation(
    volume: CtVolume,
    camera: CameraGeometry,
    config: RenderConfig = RenderConfig(),
    bus: Optional[EventBus] = None,
    threads: Optional[int] = None,
) -> np.ndarray:
    """(H, W) grid of total attenuation A, one ray per pixel."""
    w, h = camera.image_size
    focal = np.asarray(camera.focal_point)
    rows_per_block = max(1, BLOCK_SAMPLES // (w * config.n_samples))
    blocks = [np.arange(lo, min(lo + rows_per_block, h)) for lo in range(0, h, rows_per_block)]
    out = np.empty((h, w), dtype=np.float64)

    def run(rows: np.ndarray) -> None:
        ends = camera.pixel_positions(rows).reshape(-1, 3)
        starts = np.broadcast_to(focal, ends.shape)
        out[rows] = _cast_rays(volume, starts, ends, config.n_samples, config.mu_water).reshape(rows.size, w)
        publish(bus, FitEvent(FitEventType.RENDER_ROW_BLOCK, int(rows[0]), float(rows.size)))

    with ThreadPoolExecutor(max_workers=threads or env.DEEPMORPH_THREADS) as pool:
        list(pool.map(run, blocks))
    return out


def scale_to_gray(atten: np.ndarray, config: RenderConfig, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Saturate, exponentiate and map the attenuation grid to 8-bit gray values.
    Pixels outside `mask` are 0; the saturation quantile uses unmasked pixels only.
    """
    atten = np.asarray(atten, dtype=np.float64)
    if mask is None:
        mask = np.ones(atten.shape, dtype=bool)
    out = np.zeros(atten.shape, dtype=np.uint8)
    valid = atten[mask]
    if valid.size == 0:
        return out

    k = math.ceil(config.saturation_fraction * valid.size)
    if k >= 1:
        q = np.partition(valid, k - 1)[k - 1]
        valid = np.maximum(valid, q)

    intensity = np.exp(-valid)
    lo, hi = float(intensity.min()), float(intensity.max())
    if hi == lo:
        warnings.warn("uniform attenuation over the detector; image is flat", DegenerateGeometry)
        out[mask] = config.gray_max
        return out

    gray = config.gray_min + (intensity - lo) / (hi - lo) * (config.gray_max - config.gray_min)
    out[mask] = np.clip(np.floor(gray + 0.5), config.gray_min, config.gray_max).astype(np.uint8)
    return out


def render(
    volume: CtVolume,
    camera: CameraGeometry,
    config: RenderConfig = RenderConfig(),
    bus: Optional[EventBus] = None,
    threads: Optional[int] = None,
) -> np.ndarray:
    """8-bit (H, W) radiograph of `volume` seen from `camera`."""
    atten = render_attenuation(volume, camera, config, bus=bus, threads=threads)
    mask = circular_mask(camera.width, camera.height) if camera.circular_mask else None
    image = scale_to_gray(atten, config, mask)
    logger.info("rendered %dx%d image (%d samples/ray), A in [%.4f, %.4f]",
                camera.width, camera.height, config.n_samples, float(atten.min()), float(atten.max()))
    return image
