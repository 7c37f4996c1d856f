from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional

logger = logging.getLogger(__name__)


class FitEventType(str, Enum):
    """Progress event kinds published by the iterative solvers."""
    GN_ITERATION = "gn_iteration"          # geometric circle fit, value = cost
    GPA_ROUND = "gpa_round"                # Procrustes alignment, value = mean change
    CPD_ITERATION = "cpd_iteration"        # value = negative log-likelihood
    CPD_RESTART = "cpd_restart"            # value = final objective of one restart
    MORPH_ITERATION = "morph_iteration"    # value = mean point movement
    RENDER_ROW_BLOCK = "render_row_block"  # value = rows finished


@dataclass(frozen=True)
class FitEvent:
    type: FitEventType
    iteration: int
    value: float
    sigma2: Optional[float] = None
    restart: Optional[int] = None
    text: Optional[str] = None


# Subscriber signature
FitSubscriber = Callable[[FitEvent], None]


class EventBus:
    """
    In-process pub/sub.
    - subscribe() returns an unsubscribe function
    - publish() calls subscribers (safe snapshot)
    """

    def __init__(self):
        self._subs: List[FitSubscriber] = []
        self._lock = threading.Lock()

    def subscribe(self, fn: FitSubscriber):
        with self._lock:
            self._subs.append(fn)

        def unsubscribe():
            with self._lock:
                try:
                    self._subs.remove(fn)
                except ValueError:
                    pass

        return unsubscribe

    def publish(self, ev: FitEvent):
        with self._lock:
            subs = list(self._subs)

        # Call outside lock to avoid deadlocks
        for fn in subs:
            try:
                fn(ev)
            except Exception:
                # one failing observer must not abort a solver
                logger.exception("event subscriber failed on %s", ev.type.value)


def publish(bus: Optional[EventBus], ev: FitEvent) -> None:
    if bus is not None:
        bus.publish(ev)
