"""Clock abstraction shared by the balancer, simulator, and metering.

A logical clock makes window-boundary behavior exact in tests instead of
wall-time flaky; production components default to the system clock.
"""

from __future__ import annotations

import time


class Clock:
    """Source of the current time in epoch seconds."""

    def now(self) -> float:
        raise NotImplementedError


class SystemClock(Clock):
    def now(self) -> float:
        return time.time()


class LogicalClock(Clock):
    """Manually advanced clock for deterministic tests."""

    def __init__(self, start: float = 0.0) -> None:
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("cannot move a logical clock backwards")
        self._now += seconds

    def set(self, timestamp: float) -> None:
        if timestamp < self._now:
            raise ValueError("cannot move a logical clock backwards")
        self._now = float(timestamp)
