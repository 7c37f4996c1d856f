from __future__ import annotations

"""
Circle fits to foreground point sets.

- algebraic: closed-form linear least squares in (B, C, D) for
  x^2 + y^2 + Bx + Cy + D
- geometric: damped Gauss-Newton on the residuals |p - c| - r, warm-started
  from the algebraic fit inside detect_circle
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from config import GeometricFitConfig
from core.errors import DegenerateInput, NoRealCircle, NonConvergence
from core.foreground import threshold_foreground
from core.types import Circle, ConfidenceMap, PointSet
from events import EventBus, FitEvent, FitEventType, publish

logger = logging.getLogger(__name__)

COLLINEAR_RATIO = 1e-10


class FitMethod(str, Enum):
    ALGEBRAIC = "algebraic"
    GEOMETRIC = "geometric"


class NoDetectionReason(str, Enum):
    TOO_FEW_FOREGROUND = "TooFewForeground"
    DEGENERATE_INPUT = "DegenerateInput"
    NO_REAL_CIRCLE = "NoRealCircle"


@dataclass(frozen=True)
class AlgebraicCircleCoefficients:
    B: float
    C: float
    D: float

    def radicand(self) -> float:
        return self.B * self.B / 4.0 + self.C * self.C / 4.0 - self.D

    def to_circle(self) -> Circle:
        rad = self.radicand()
        if not rad > 0.0:
            raise NoRealCircle(f"B^2/4 + C^2/4 - D = {rad} is not positive")
        return Circle(-self.B / 2.0, -self.C / 2.0, math.sqrt(rad))

    @classmethod
    def from_circle(cls, circle: Circle) -> "AlgebraicCircleCoefficients":
        return cls(-2.0 * circle.cx, -2.0 * circle.cy, circle.cx ** 2 + circle.cy ** 2 - circle.r ** 2)


@dataclass(frozen=True)
class Detection:
    """Result of detect_circle; `circle` is None for a NoDetection outcome."""
    circle: Optional[Circle]
    method: FitMethod
    n_points: int
    cost: Optional[float] = None
    reason: Optional[NoDetectionReason] = None
    converged: bool = True

    @property
    def detected(self) -> bool:
        return self.circle is not None


# -------------------------
# Costs
# -------------------------
def circle_cost_geometric(points: PointSet, circle: Circle) -> float:
    d = np.hypot(points.xs - circle.cx, points.ys - circle.cy) - circle.r
    return float(np.sum(d * d))


def circle_cost_algebraic(points: PointSet, coeffs: AlgebraicCircleCoefficients) -> float:
    x, y = points.xs, points.ys
    e = x * x + y * y + coeffs.B * x + coeffs.C * y + coeffs.D
    return float(np.sum(e * e))


def _check_spread(points: PointSet) -> None:
    if len(points) < 3:
        raise DegenerateInput(f"need at least 3 points, got {len(points)}")
    centered = points.points - points.points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] < COLLINEAR_RATIO * sv[0]:
        raise DegenerateInput("points are collinear or coincident")


# -------------------------
# Algebraic fit
# -------------------------
def algebraic_coefficients(points: PointSet) -> AlgebraicCircleCoefficients:
    """
    Unique minimiser of sum (x^2 + y^2 + Bx + Cy + D)^2.

    The system is solved in centred, RMS-normalised coordinates; the cost is
    equivariant under that reparametrisation so the minimiser maps back exactly.
    """
    _check_spread(points)
    mean = points.points.mean(axis=0)
    centered = points.points - mean
    k = math.sqrt(float(np.mean(np.sum(centered * centered, axis=1))))
    u = centered / k

    design = np.column_stack([u[:, 0], u[:, 1], np.ones(len(points))])
    rhs = -(u[:, 0] ** 2 + u[:, 1] ** 2)
    (b, c, d), *_ = np.linalg.lstsq(design, rhs, rcond=None)

    radicand = b * b / 4.0 + c * c / 4.0 - d
    if not radicand > 0.0:
        raise NoRealCircle(f"algebraic fit has no real circle (radicand {radicand})")

    cx = mean[0] - k * b / 2.0
    cy = mean[1] - k * c / 2.0
    r2 = k * k * radicand
    return AlgebraicCircleCoefficients(-2.0 * cx, -2.0 * cy, cx * cx + cy * cy - r2)


def fit_circle_algebraic(points: PointSet) -> Circle:
    return algebraic_coefficients(points).to_circle()


# -------------------------
# Geometric fit
# -------------------------
def _residuals_and_jacobian(xy: np.ndarray, params: np.ndarray):
    dx = params[0] - xy[:, 0]
    dy = params[1] - xy[:, 1]
    dist = np.hypot(dx, dy)
    safe = np.where(dist > 0.0, dist, 1.0)
    jac = np.column_stack([
        np.where(dist > 0.0, dx / safe, 0.0),
        np.where(dist > 0.0, dy / safe, 0.0),
        -np.ones_like(dist),
    ])
    return dist - params[2], jac


def fit_circle_geometric(
    points: PointSet,
    init: Circle,
    config: GeometricFitConfig = GeometricFitConfig(),
    bus: Optional[EventBus] = None,
) -> Circle:
    """
    Minimise sum (|p - c| - r)^2 starting from `init`.

    Steps are only accepted when they do not increase the cost, so the result
    never costs more than `init`. Raises NonConvergence carrying the best
    iterate when max_iterations runs out before an accepted step is shorter
    than step_tolerance.
    """
    _check_spread(points)
    xy = points.points
    params = init.as_array()
    res, jac = _residuals_and_jacobian(xy, params)
    cost = float(res @ res)
    damping = config.damping_init

    for it in range(config.max_iterations):
        jtj = jac.T @ jac
        grad = jac.T @ res
        step = np.linalg.solve(jtj + damping * np.eye(3), -grad)
        step_norm = float(np.linalg.norm(step))

        trial = params + step
        if trial[2] > 0.0:
            trial_res, trial_jac = _residuals_and_jacobian(xy, trial)
            trial_cost = float(trial_res @ trial_res)
        else:
            trial_cost = math.inf

        accepted = trial_cost <= cost
        if accepted:
            params, res, jac, cost = trial, trial_res, trial_jac, trial_cost
            damping /= 10.0
        else:
            damping *= 10.0

        publish(bus, FitEvent(FitEventType.GN_ITERATION, it, cost))
        logger.debug("gauss-newton it=%d cost=%.6g step=%.3g damping=%.1e", it, cost, step_norm, damping)

        # only accepted steps count toward convergence
        if accepted and step_norm < config.step_tolerance:
            return Circle(*params)

    raise NonConvergence(
        f"geometric fit did not converge in {config.max_iterations} iterations",
        best=Circle(*params),
    )


# -------------------------
# Gated detection pipeline
# -------------------------
def detect_circle(
    cmap: ConfidenceMap,
    tau: float = 0.5,
    min_foreground: int = 100,
    config: GeometricFitConfig = GeometricFitConfig(),
    method: FitMethod = FitMethod.ALGEBRAIC,
    bus: Optional[EventBus] = None,
) -> Detection:
    """Threshold, gate on the foreground count, then fit."""
    if min_foreground < 3:
        raise DegenerateInput("min_foreground must be >= 3")
    method = FitMethod(method)
    fg = threshold_foreground(cmap, tau)
    if len(fg) < min_foreground:
        logger.warning("no detection: %d foreground pixels < gate %d", len(fg), min_foreground)
        return Detection(None, method, len(fg), reason=NoDetectionReason.TOO_FEW_FOREGROUND)

    try:
        circle = fit_circle_algebraic(fg)
        converged = True
        if method is FitMethod.GEOMETRIC:
            try:
                circle = fit_circle_geometric(fg, circle, config, bus=bus)
            except NonConvergence as e:
                logger.warning("%s; keeping best iterate", e)
                circle, converged = e.best, False
    except DegenerateInput:
        return Detection(None, method, len(fg), reason=NoDetectionReason.DEGENERATE_INPUT)
    except NoRealCircle:
        return Detection(None, method, len(fg), reason=NoDetectionReason.NO_REAL_CIRCLE)

    cost = circle_cost_geometric(fg, circle)
    logger.info("%s fit on %d pixels: (%.3f, %.3f, %.3f) cost=%.6g",
                method.value, len(fg), circle.cx, circle.cy, circle.r, cost)
    return Detection(circle, method, len(fg), cost=cost, converged=converged)
