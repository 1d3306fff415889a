"""Monotonic time sources for the harness.

All timestamps flow from one clock per benchmark run: the OS monotonic clock
for real workloads, or a simulated clock that jumps by drawn latencies so a
multi-hour run replays in milliseconds. Both count integer nanoseconds
internally; millisecond/second views are derived by exact division.
"""

from __future__ import annotations

import time


class RealClock:
    """Wrapper over the OS monotonic clock."""

    name = "real"

    def now_ns(self) -> int:
        return time.monotonic_ns()

    def now_ms(self) -> float:
        return self.now_ns() / 1e6


class SimulatedClock:
    """Virtual monotonic clock advanced explicitly by the harness."""

    name = "simulated"

    def __init__(self, start_ns: int = 0):
        self._t_ns = int(start_ns)

    def now_ns(self) -> int:
        return self._t_ns

    def now_ms(self) -> float:
        return self._t_ns / 1e6

    def advance_ns(self, delta_ns: int) -> None:
        if delta_ns < 0:
            raise ValueError("clock cannot move backwards")
        self._t_ns += int(delta_ns)

    def advance_s(self, delta_s: float) -> None:
        self.advance_ns(round(delta_s * 1e9))


Clock = RealClock | SimulatedClock
