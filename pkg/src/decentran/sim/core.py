"""Single-threaded discrete-event simulator with a virtual clock."""

from __future__ import annotations

import hashlib
import heapq
import itertools
import random
from typing import Callable


class Event:
    __slots__ = ("time", "fn", "args", "cancelled")

    def __init__(self, time: float, fn: Callable, args: tuple):
        self.time = time
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    """Global event queue ordered by (time, insertion order).

    Every random draw goes through a named substream derived from the seed, so
    adding draws in one subsystem never shifts another subsystem's sequence.
    """

    def __init__(self, seed: int = 0, *, trace: bool = True):
        self.seed = seed
        self.now = 0.0
        self._queue: list[tuple[float, int, Event]] = []
        self._seq = itertools.count()
        self._streams: dict[str, random.Random] = {}
        self.trace_enabled = trace
        self.trace: list[str] = []
        self.events_run = 0

    def rng(self, name: str) -> random.Random:
        stream = self._streams.get(name)
        if stream is None:
            digest = hashlib.sha256(f"{self.seed}/{name}".encode()).digest()
            stream = self._streams[name] = random.Random(int.from_bytes(digest[:8], "big"))
        return stream

    def schedule(self, delay: float, fn: Callable, *args) -> Event:
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        return self.at(self.now + delay, fn, *args)

    def at(self, time: float, fn: Callable, *args) -> Event:
        if time < self.now:
            raise ValueError(f"event at {time} is before now={self.now}")
        ev = Event(time, fn, args)
        heapq.heappush(self._queue, (time, next(self._seq), ev))
        return ev

    def record(self, entity: str, kind: str, detail: str = "") -> None:
        if self.trace_enabled:
            self.trace.append(f"{self.now:.9f},{entity},{kind},{detail}")

    def peek(self) -> float | None:
        while self._queue and self._queue[0][2].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0][0] if self._queue else None

    def step(self) -> bool:
        while self._queue:
            time, _, ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self.now = time
            self.events_run += 1
            ev.fn(*ev.args)
            return True
        return False

    def run(
        self,
        until: float | None = None,
        stop: Callable[[], bool] | None = None,
    ) -> bool:
        """Run events up to time ``until`` or until ``stop()`` is true.

        Returns True if ``stop`` was satisfied. The clock is advanced to
        ``until`` when the horizon is reached.
        """
        if stop is not None and stop():
            return True
        queue = self._queue
        while queue:
            time, _, ev = queue[0]
            if until is not None and time > until:
                break
            heapq.heappop(queue)
            if ev.cancelled:
                continue
            self.now = time
            self.events_run += 1
            ev.fn(*ev.args)
            if stop is not None and stop():
                return True
        if until is not None and until > self.now:
            self.now = until
        return stop() if stop is not None else False

    def run_for(self, duration: float, stop: Callable[[], bool] | None = None) -> bool:
        return self.run(until=self.now + duration, stop=stop)


class NodeCpu:
    """Work-unit budget of one node, served first-come first-served.

    ``budget`` is work units per simulated second; ``None`` means unlimited.
    ``run`` queues background work (transaction validation) and calls back on
    completion. ``charge`` accounts for foreground consensus work: it runs
    immediately but pushes the background queue back by the same amount.
    """

    def __init__(self, sim: Simulator, budget: float | None):
        self.sim = sim
        self.budget = budget
        self.free_at = 0.0
        self.units = 0.0

    def run(self, units: float, fn: Callable, *args) -> None:
        self.units += units
        if not self.budget:
            fn(*args)
            return
        start = max(self.sim.now, self.free_at)
        self.free_at = start + units / self.budget
        self.sim.at(self.free_at, fn, *args)

    def charge(self, units: float) -> None:
        self.units += units
        if self.budget:
            self.free_at = max(self.sim.now, self.free_at) + units / self.budget
