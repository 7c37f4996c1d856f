from __future__ import annotations

import logging

import numpy as np

from core.errors import OutOfRange
from core.types import ConfidenceMap, PointSet

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.5


def threshold_foreground(cmap: ConfidenceMap, tau: float = DEFAULT_TAU) -> PointSet:
    """
    Foreground pixel set {(x, y) | O(x, y) > tau}, strict inequality.

    Points are returned in row-major scan order as integer-valued (x, y).
    """
    if not 0.0 <= tau <= 1.0:
        raise OutOfRange(f"tau must lie in [0, 1], got {tau}")
    rows, cols = np.nonzero(cmap.values > tau)
    logger.debug("threshold %.3f kept %d of %d pixels", tau, rows.size, cmap.values.size)
    return PointSet(np.column_stack([cols, rows]).astype(np.float64))
