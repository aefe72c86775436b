"""Bounded pool of outbound-communication slots.

Remote policy calls and bridge publishes must hold a slot, which caps
concurrent outbound I/O at max_outbound_inflight. Waiters block until a
lease is released; shutdown wakes everyone with PoolClosed.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager


class PoolClosed(Exception):
    pass


class OutboundPool:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._cond = threading.Condition()
        self._in_flight = 0
        self._closed = False
        # High-water mark, kept for the scale/backpressure assertions.
        self.max_in_flight_seen = 0

    def acquire(self, timeout: float | None = None) -> None:
        with self._cond:
            while True:
                if self._closed:
                    raise PoolClosed("outbound pool is shut down")
                if self._in_flight < self.capacity:
                    self._in_flight += 1
                    if self._in_flight > self.max_in_flight_seen:
                        self.max_in_flight_seen = self._in_flight
                    return
                if not self._cond.wait(timeout):
                    raise TimeoutError("no outbound slot became available")

    def release(self) -> None:
        with self._cond:
            if self._in_flight <= 0:
                raise RuntimeError("release without acquire")
            self._in_flight -= 1
            self._cond.notify()

    @contextmanager
    def slot(self, timeout: float | None = None):
        self.acquire(timeout)
        try:
            yield
        finally:
            self.release()

    @property
    def in_flight(self) -> int:
        with self._cond:
            return self._in_flight

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
