"""Ledger access tiers a gNB may host: full node, light node, cache-only proxy.

* ``FullHandle`` wraps a replica that holds the committed chain and state.
* ``LightHandle`` syncs block headers from a designated full node and asks
  that node for records as of its last verified header.
* ``CacheHandle`` copies a registry snapshot from a full node every
  ``refresh_interval`` and can only submit through an optional relay.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import NotFoundError, RelayUnreachableError, UnsupportedTierError
from .identity import BcAdd
from .ledger import Block, LedgerReplica, LedgerState, MobilityRecord

DEFAULT_REFRESH_INTERVAL = 0.500


class Tier(enum.Enum):
    CACHE_ONLY = "cache"
    LIGHT = "light"
    FULL = "full"


@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_hash: bytes
    block_hash: bytes
    commit_time: float

    @classmethod
    def of(cls, block: Block) -> "BlockHeader":
        return cls(block.height, block.prev_hash, block.block_hash, block.commit_time)


class TierHandle:
    tier: Tier
    node_id: str

    def snapshot(self) -> LedgerState:
        raise NotImplementedError

    @property
    def snapshot_height(self) -> int:
        return self.snapshot().chain_height - 1

    def is_registered(self, bcadd: BcAdd) -> bool:
        return self.snapshot().is_registered(bcadd)

    def read_registry(self, key: BcAdd) -> tuple[MobilityRecord, int]:
        state = self.snapshot()
        rec = state.mobility_registry.get(key)
        if rec is None:
            raise NotFoundError(f"no mobility record for {key!r}")
        return rec, state.chain_height - 1

    def read_identity(self, key: BcAdd):
        rec = self.snapshot().identity(key)
        if rec is None:
            raise NotFoundError(f"{key!r} is not registered")
        return rec

    def submit(self, tx, origin: str):
        raise UnsupportedTierError(f"{self.tier.value} tier cannot submit transactions")


class FullHandle(TierHandle):
    tier = Tier.FULL

    def __init__(self, node_id: str, replica: LedgerReplica, engine):
        self.node_id = node_id
        self.replica = replica
        self.engine = engine

    def snapshot(self) -> LedgerState:
        return self.replica.state

    def state_at(self, height: int) -> LedgerState | None:
        return self.replica.state_at(height)

    def headers_since(self, height: int) -> list[BlockHeader]:
        return [BlockHeader.of(b) for b in self.replica.chain[height + 1:]]

    @property
    def available(self) -> bool:
        return not self.engine.net.is_crashed(self.node_id)

    def submit(self, tx, origin: str):
        return self.engine.submit(tx, origin)


class LightHandle(TierHandle):
    """Header chain plus record queries answered by one full node."""

    tier = Tier.LIGHT

    def __init__(self, node_id: str, source: FullHandle, sim, *, sync_interval: float = 0.05):
        self.node_id = node_id
        self.source = source
        self.sim = sim
        self.sync_interval = sync_interval
        self.headers: list[BlockHeader] = [BlockHeader.of(source.replica.chain[0])]
        self._state = source.state_at(0) or LedgerState()
        self.rejected_headers = 0
        sim.schedule(sync_interval, self._sync)

    @property
    def header_height(self) -> int:
        return self.headers[-1].height

    def _sync(self) -> None:
        self.sim.schedule(self.sync_interval, self._sync)
        if not self.source.available:
            return
        for h in self.source.headers_since(self.header_height):
            if h.prev_hash != self.headers[-1].block_hash or h.height != self.header_height + 1:
                self.rejected_headers += 1
                break
            self.headers.append(h)
        state = self.source.state_at(self.header_height)
        if state is not None and state.head_hash == self.headers[-1].block_hash:
            self._state = state

    def snapshot(self) -> LedgerState:
        return self._state

    def submit(self, tx, origin: str):
        return self.source.engine.submit(tx, origin)


class CacheHandle(TierHandle):
    """Periodically refreshed registry copy; never writes to the ledger itself."""

    tier = Tier.CACHE_ONLY

    def __init__(
        self,
        node_id: str,
        source: FullHandle,
        sim,
        *,
        refresh_interval: float = DEFAULT_REFRESH_INTERVAL,
        relay: FullHandle | None = None,
    ):
        if refresh_interval <= 0:
            raise ValueError("refresh_interval must be positive")
        self.node_id = node_id
        self.source = source
        self.sim = sim
        self.refresh_interval = refresh_interval
        self.relay = relay
        self._state = source.snapshot()
        self.refreshed_at = sim.now
        self.refreshes = 0
        sim.schedule(refresh_interval, self._refresh)

    def _refresh(self) -> None:
        self.sim.schedule(self.refresh_interval, self._refresh)
        if not self.source.available:
            return
        self._state = self.source.snapshot()
        self.refreshed_at = self.sim.now
        self.refreshes += 1

    def snapshot(self) -> LedgerState:
        return self._state

    def submit(self, tx, origin: str):
        if self.relay is None:
            raise UnsupportedTierError("cache-only proxy has no data-interface relay")
        if not self.relay.available or not self.relay.engine.net.reachable(self.node_id, self.relay.node_id):
            raise RelayUnreachableError(f"relay {self.relay.node_id} is unreachable")
        return self.relay.submit(tx, origin)
