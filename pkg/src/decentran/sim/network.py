"""Simulated message network.

Links are FIFO (a later send on the same directed link never overtakes an
earlier one), delay is ``latency + jitter + size / bandwidth`` with jitter drawn
from a normal distribution truncated at two standard deviations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable

from .core import Simulator


@dataclass(frozen=True)
class SimNetworkConfig:
    link_latency: float = 0.0002     # seconds, mean one-way delay
    bandwidth: float = 10_000e6      # bits per simulated second
    jitter: float = 0.00002          # std of the truncated normal, seconds
    seed: int = 0

    def __post_init__(self):
        if self.link_latency < 0:
            raise ValueError("link_latency must be >= 0")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")


class SimNetwork:
    def __init__(self, sim: Simulator, config: SimNetworkConfig = SimNetworkConfig()):
        self.sim = sim
        self.config = config
        self._routes: dict[str, dict[type | None, Callable]] = {}
        self._last_arrival: dict[tuple[str, str], float] = {}
        self._crashed: set[str] = set()
        self._group: dict[str, int] = {}
        self._solo_ids = itertools.count(-1, -1)
        self._rng = sim.rng("network")
        self.capture_enabled = False
        self.captured: list[tuple[float, str, str, bytes]] = []
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.bytes_sent = 0

    # -- endpoints -----------------------------------------------------------

    def register(self, addr: str, handler: Callable, *msg_types: type) -> None:
        """Route messages for ``addr`` to ``handler(src, msg)``.

        With ``msg_types`` the handler only receives those message classes;
        without, it becomes the default for the address.
        """
        table = self._routes.setdefault(addr, {})
        for t in msg_types or (None,):
            table[t] = handler

    def has_endpoint(self, addr: str) -> bool:
        return addr in self._routes

    # -- faults --------------------------------------------------------------

    def crash(self, addr: str) -> None:
        self._crashed.add(addr)

    def recover(self, addr: str) -> None:
        self._crashed.discard(addr)

    def is_crashed(self, addr: str) -> bool:
        return addr in self._crashed

    def isolate(self, addr: str) -> None:
        self._group[addr] = next(self._solo_ids)

    def rejoin(self, addr: str) -> None:
        self._group.pop(addr, None)

    def split(self, groups: Iterable[Iterable[str]]) -> None:
        """Only addresses in the same group can talk; unlisted ones form group 0."""
        self._group.clear()
        for i, g in enumerate(groups, start=1):
            for addr in g:
                self._group[addr] = i

    def heal(self) -> None:
        self._group.clear()

    def reachable(self, src: str, dst: str) -> bool:
        if src in self._crashed or dst in self._crashed:
            return False
        return self._group.get(src, 0) == self._group.get(dst, 0)

    # -- transport -----------------------------------------------------------

    def _delay(self, size: int) -> float:
        cfg = self.config
        jitter = 0.0
        if cfg.jitter > 0:
            bound = 2.0 * cfg.jitter
            while True:
                jitter = self._rng.gauss(0.0, cfg.jitter)
                if -bound <= jitter <= bound:
                    break
        return max(0.0, cfg.link_latency + jitter) + size * 8.0 / cfg.bandwidth

    def send(self, src: str, dst: str, msg, *, wire: bytes | None = None) -> bool:
        if wire is None:
            wire = msg.encode()
        self.sent += 1
        self.bytes_sent += len(wire)
        if self.capture_enabled:
            self.captured.append((self.sim.now, src, dst, wire))
        if not self.reachable(src, dst):
            self.dropped += 1
            return False
        link = (src, dst)
        arrival = max(self.sim.now + self._delay(len(wire)), self._last_arrival.get(link, 0.0))
        self._last_arrival[link] = arrival
        self.sim.at(arrival, self._deliver, src, dst, msg)
        return True

    def broadcast(self, src: str, dsts: Iterable[str], msg) -> None:
        wire = msg.encode()
        for dst in dsts:
            if dst != src:
                self.send(src, dst, msg, wire=wire)

    def _deliver(self, src: str, dst: str, msg) -> None:
        # faults that begin while a message is in flight still drop it
        if not self.reachable(src, dst):
            self.dropped += 1
            return
        table = self._routes.get(dst)
        handler = None
        if table is not None:
            handler = table.get(type(msg)) or table.get(None)
        if handler is None:
            self.dropped += 1
            return
        self.delivered += 1
        handler(src, msg)

    def captured_bytes(self) -> bytes:
        return b"".join(w for _, _, _, w in self.captured)
