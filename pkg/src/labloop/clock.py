"""Clock injection. Records and events carry integer-second timestamps;
campaign chains need fully deterministic ones."""

import threading
import time


class WallClock:
    def now(self) -> int:
        return int(time.time())


class SimClock:
    """Manually advanced clock for tests and simulated instrument time."""

    def __init__(self, start: int = 0):
        self._now = start

    def now(self) -> int:
        return self._now

    def advance(self, seconds: int) -> int:
        self._now += seconds
        return self._now


class CountingClock:
    """Ticks once per reading. Campaign record chains use this so identical
    configs produce byte-identical chains."""

    def __init__(self, start: int = 0):
        self._next = start
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            value = self._next
            self._next += 1
            return value
