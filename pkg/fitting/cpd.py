from __future__ import annotations

"""
Rigid / similarity Coherent Point Drift.

The transformed source points are the centroids of an equal-weight Gaussian
mixture with shared isotropic variance sigma2, plus a uniform outlier
component of weight w. EM alternates posteriors p(n | x_m) (E-step) and a
weighted similarity Procrustes update with a closed-form sigma2 (M-step).

The reported objective is the negative log-likelihood of the target under
the mixture,

    -sum_m log[ (1 - w)/N * sum_n N(x_m; T(y_n), sigma2 I) + w / M ]

which EM never increases.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

import env
from config import CpdConfig
from core.errors import DegenerateInput, RegistrationFailed
from core.types import PointSet
from events import EventBus, FitEvent, FitEventType, publish
from fitting.transform import SimilarityTransform2D

logger = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-12
DIM = 2


@dataclass(frozen=True, eq=False)
class CpdResult:
    transform: SimilarityTransform2D
    posteriors: np.ndarray  # (N source, M target); column sums <= 1
    final_sigma2: float
    objective: float
    iterations: int = 0
    converged: bool = False
    restart: int = 0


def subsample_target(points: np.ndarray, limit: int) -> np.ndarray:
    """Uniform, deterministic subsample (evenly spaced indices) when above `limit`."""
    if points.shape[0] <= limit:
        return points
    idx = np.unique(np.round(np.linspace(0, points.shape[0] - 1, limit)).astype(int))
    return points[idx]


def _spread(points: np.ndarray) -> float:
    return float(np.max(np.ptp(points, axis=0)))


def _e_step(x: np.ndarray, ty: np.ndarray, sigma2: float, w: float) -> Tuple[np.ndarray, float]:
    """Posterior matrix (N, M) and negative log-likelihood at the given parameters."""
    n, m = ty.shape[0], x.shape[0]
    d2 = np.sum((ty[:, None, :] - x[None, :, :]) ** 2, axis=2)
    log_k = -d2 / (2.0 * sigma2)
    lse = logsumexp(log_k, axis=0)  # (M,)
    log_norm = math.log(2.0 * math.pi * sigma2)

    if w > 0.0:
        log_c = log_norm + math.log(w) - math.log(1.0 - w) + math.log(n) - math.log(m)
        denom = np.logaddexp(lse, log_c)
    else:
        denom = lse
    posteriors = np.exp(log_k - denom[None, :])
    log_px = math.log((1.0 - w) / n) - log_norm + denom
    return posteriors, float(-np.sum(log_px))


def _m_step(x: np.ndarray, y: np.ndarray, p: np.ndarray, estimate_scale: bool):
    pt1 = p.sum(axis=0)  # weight per target point
    p1 = p.sum(axis=1)   # weight per source point
    np_total = float(p1.sum())
    if np_total <= 0.0:
        raise DegenerateInput("posterior mass vanished")

    mu_x = pt1 @ x / np_total
    mu_y = p1 @ y / np_total
    xh = x - mu_x
    yh = y - mu_y

    a = xh.T @ p.T @ yh
    u, _, vt = np.linalg.svd(a)
    c = np.diag([1.0, np.linalg.det(u @ vt)])
    rot = u @ c @ vt

    tr_ar = float(np.trace(a.T @ rot))
    tr_yy = float(np.sum(p1 * np.sum(yh * yh, axis=1)))
    tr_xx = float(np.sum(pt1 * np.sum(xh * xh, axis=1)))
    scale = tr_ar / tr_yy if estimate_scale else 1.0
    if scale <= 0.0:
        raise DegenerateInput("non-positive scale estimate")

    t = mu_x - scale * rot @ mu_y
    sigma2 = (tr_xx - 2.0 * scale * tr_ar + scale * scale * tr_yy) / (np_total * DIM)
    return rot, scale, t, sigma2


def cpd_register(
    source: PointSet,
    target: PointSet,
    config: CpdConfig = CpdConfig(),
    bus: Optional[EventBus] = None,
    restart: int = 0,
) -> CpdResult:
    """Register `source` (mixture centroids) onto `target` (observations)."""
    y = source.points
    x = subsample_target(target.points, config.max_target_points)
    if y.shape[0] < 2 or x.shape[0] < 2:
        raise DegenerateInput(f"need >= 2 source and target points, got {y.shape[0]} and {x.shape[0]}")
    if _spread(y) == 0.0 or _spread(x) == 0.0:
        raise DegenerateInput("source or target points are all coincident")

    w = config.outlier_weight
    n, m = y.shape[0], x.shape[0]
    rot = np.eye(2)
    scale = 1.0
    t = np.zeros(2)
    sigma2 = float(np.sum((y[:, None, :] - x[None, :, :]) ** 2)) / (DIM * n * m)

    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        ty = scale * y @ rot.T + t
        p, objective = _e_step(x, ty, sigma2, w)
        publish(bus, FitEvent(FitEventType.CPD_ITERATION, it, objective, sigma2=sigma2, restart=restart))

        rot, scale, t, new_sigma2 = _m_step(x, y, p, config.estimate_scale)
        if new_sigma2 <= SIGMA2_FLOOR:
            logger.debug("cpd restart %d: sigma2 collapsed at iteration %d", restart, it)
            sigma2 = SIGMA2_FLOOR
            converged = True
            break
        delta = abs(new_sigma2 - sigma2)
        sigma2 = new_sigma2
        if delta < config.sigma_tolerance:
            converged = True
            break

    ty = scale * y @ rot.T + t
    p, objective = _e_step(x, ty, sigma2, w)
    transform = SimilarityTransform2D.from_matrix(scale * rot, t)
    logger.debug("cpd restart %d: %d iterations, sigma2=%.3e, nll=%.6g", restart, it, sigma2, objective)
    return CpdResult(transform, p, sigma2, objective, it, converged, restart)


def _restart_poses(n_rotations: int, try_reflection: bool) -> List[SimilarityTransform2D]:
    poses = [SimilarityTransform2D(2.0 * math.pi * k / n_rotations) for k in range(n_rotations)]
    if try_reflection:
        poses += [SimilarityTransform2D(2.0 * math.pi * k / n_rotations, reflected=True)
                  for k in range(n_rotations)]
    return poses


def cpd_register_robust(
    source: PointSet,
    target: PointSet,
    config: CpdConfig = CpdConfig(),
    n_rotations: Optional[int] = None,
    try_reflection: Optional[bool] = None,
    bus: Optional[EventBus] = None,
    threads: Optional[int] = None,
) -> CpdResult:
    """
    Run cpd_register from rotated (and optionally reflected) copies of the
    source and keep the lowest objective; ties go to the smallest restart
    index. The initial pose is composed into the reported transform.
    """
    n_rotations = config.n_rotations if n_rotations is None else n_rotations
    try_reflection = config.try_reflection if try_reflection is None else try_reflection
    if n_rotations < 1:
        raise DegenerateInput("n_rotations must be >= 1")
    poses = _restart_poses(n_rotations, try_reflection)

    def run(index: int):
        pose = poses[index]
        try:
            res = cpd_register(PointSet(pose.apply(source.points)), target, config, bus, restart=index)
        except DegenerateInput as e:
            logger.warning("cpd restart %d failed: %s", index, e)
            return None
        publish(bus, FitEvent(FitEventType.CPD_RESTART, index, res.objective, sigma2=res.final_sigma2, restart=index))
        return CpdResult(
            res.transform.compose(pose),
            res.posteriors,
            res.final_sigma2,
            res.objective,
            res.iterations,
            res.converged,
            index,
        )

    with ThreadPoolExecutor(max_workers=threads or env.DEEPMORPH_THREADS) as pool:
        results = list(pool.map(run, range(len(poses))))

    valid = [r for r in results if r is not None and math.isfinite(r.objective)]
    if not valid:
        raise RegistrationFailed(f"all {len(poses)} CPD restarts failed")
    best = min(valid, key=lambda r: (r.objective, r.restart))
    logger.info("cpd: best of %d restarts is #%d (rotation %.3f, reflected=%s, nll=%.6g)",
                len(poses), best.restart, best.transform.rotation, best.transform.reflected, best.objective)
    return best
