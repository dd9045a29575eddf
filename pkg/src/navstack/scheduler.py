"""Simulation clock with periodic node tasks, plus the two ways of driving it.

``LockstepDriver`` advances the clock on the caller's thread whenever a node
waits, so a whole episode is a deterministic single-threaded computation.
``ThreadedDriver`` runs the clock on a background thread paced against wall
time; waiting nodes block until simulation time catches up.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

_EPS = 1e-9


@dataclass(order=True)
class _Task:
    due: float
    order: int
    period: float = field(compare=False)
    phase: float = field(compare=False)
    count: int = field(compare=False)
    callback: Callable[[float], None] = field(compare=False)
    name: str = field(compare=False, default="")
    cancelled: bool = field(compare=False, default=False)

    def cancel(self) -> None:
        self.cancelled = True


class SimClock:
    def __init__(self, start: float = 0.0):
        self.now = start
        self._heap: list[_Task] = []
        self._order = itertools.count()
        self._lock = threading.RLock()

    def every(self, period: float, callback: Callable[[float], None], phase: float | None = None,
              name: str = "") -> _Task:
        """Run ``callback(t)`` at t = phase + k * period for k = 0, 1, ..."""
        if not period > 0:
            raise ValueError("period must be positive")
        with self._lock:
            phase = self.now if phase is None else phase
            task = _Task(phase, next(self._order), period, phase, 0, callback, name)
            heapq.heappush(self._heap, task)
            return task

    def advance_to(self, t: float) -> None:
        with self._lock:
            while self._heap and self._heap[0].due <= t + _EPS:
                task = heapq.heappop(self._heap)
                if task.cancelled:
                    continue
                self.now = max(self.now, task.due)
                task.callback(task.due)
                task.count += 1
                task.due = task.phase + task.count * task.period
                task.order = next(self._order)
                heapq.heappush(self._heap, task)
            self.now = max(self.now, t)

    def advance(self, dt: float) -> None:
        self.advance_to(self.now + dt)


class LockstepDriver:
    lockstep = True

    def __init__(self, clock: SimClock | None = None):
        self.clock = clock or SimClock()

    def now(self) -> float:
        return self.clock.now

    def wait(self, dt: float) -> None:
        self.clock.advance(dt)

    def start(self) -> None:
        pass

    def stop(self) -> None:
        pass


class ThreadedDriver:
    """Advance the clock from a background thread at ``speedup`` times wall time."""

    lockstep = False

    def __init__(self, clock: SimClock | None = None, speedup: float = 1.0, step: float = 0.005):
        self.clock = clock or SimClock()
        self.speedup = speedup
        self.step = step
        self._cond = threading.Condition()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def now(self) -> float:
        return self.clock.now

    def _run(self) -> None:
        wall0, sim0 = time.monotonic(), self.clock.now
        while not self._stop.is_set():
            target = sim0 + (time.monotonic() - wall0) * self.speedup
            if target > self.clock.now:
                self.clock.advance_to(min(target, self.clock.now + self.step * 10))
                with self._cond:
                    self._cond.notify_all()
            else:
                time.sleep(self.step / self.speedup)

    def start(self) -> None:
        if self._thread is None:
            self._thread = threading.Thread(target=self._run, name="sim-clock", daemon=True)
            self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=1.0)
            self._thread = None
        with self._cond:
            self._cond.notify_all()

    def wait(self, dt: float) -> None:
        target = self.clock.now + dt
        with self._cond:
            while self.clock.now < target - _EPS and not self._stop.is_set():
                self._cond.wait(0.05)
