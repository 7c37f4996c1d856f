from __future__ import annotations

import logging
from typing import List, Sequence

import numpy as np

from core.errors import AmplitudeMismatch, ShapeMismatch
from core.types import Circle, Polyline
from fitting.pdm import shape_vector
from synth.confmap import make_rng

logger = logging.getLogger(__name__)


def deformation_fields(n_points: int, n_modes: int) -> np.ndarray:
    """
    (n_modes, 2N) orthonormal displacement patterns, sinusoidal along the
    point index. Frequencies 2, 3, ... come first (cosine then sine, x then
    y), followed by frequency 1 and the constant patterns, so the first few
    fields are smooth non-rigid deformations of a closed contour.
    """
    if not 0 <= n_modes <= 2 * n_points:
        raise ShapeMismatch(f"n_modes must lie in [0, {2 * n_points}], got {n_modes}")
    phase = 2.0 * np.pi * np.arange(n_points) / n_points
    freqs = list(range(2, n_points // 2 + 1)) + [1, 0]

    candidates = []
    for f in freqs:
        for wave in (np.cos(f * phase), np.sin(f * phase)):
            if np.max(np.abs(wave)) < 1e-9:
                continue
            for axis in (0, 1):
                field = np.zeros((n_points, 2))
                field[:, axis] = wave
                candidates.append(field.ravel())
            if len(candidates) >= n_modes:
                break
        if len(candidates) >= n_modes:
            break
    if n_modes == 0:
        return np.zeros((0, 2 * n_points))

    q, r = np.linalg.qr(np.asarray(candidates[:n_modes]).T)
    q = q * np.sign(np.diag(r))
    return q.T


def generate_shape_family(
    base: Sequence[float],
    n_shapes: int,
    n_modes: int,
    mode_amplitudes: Sequence[float],
    seed: int,
) -> List[np.ndarray]:
    """base + sum_j c_j field_j with c_j ~ N(0, amplitude_j^2), seeded."""
    base = shape_vector(base)
    amps = np.asarray(mode_amplitudes, dtype=np.float64).ravel()
    if amps.size != n_modes:
        raise AmplitudeMismatch(f"{amps.size} amplitudes for {n_modes} modes")
    fields = deformation_fields(base.size // 2, n_modes)
    coeffs = make_rng(seed).standard_normal((n_shapes, n_modes)) * amps
    logger.debug("shape family: %d shapes, %d modes, seed %d", n_shapes, n_modes, seed)
    return [base + c @ fields for c in coeffs]


def circle_outline(circle: Circle, n: int = 360) -> Polyline:
    """Closed n-gon inscribed in the circle, starting at angle 0."""
    if n < 3:
        raise ValueError("circle outline needs at least 3 vertices")
    t = 2.0 * np.pi * np.arange(n) / n
    return Polyline(np.column_stack([circle.cx + circle.r * np.cos(t), circle.cy + circle.r * np.sin(t)]), closed=True)
