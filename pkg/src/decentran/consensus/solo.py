"""Single orderer: packs a block when it is full or the batch timer fires."""

from __future__ import annotations

from ..ledger import Block
from .base import ConsensusEngine, ConsensusNode, EngineKind


class SoloNode(ConsensusNode):
    def __init__(self, engine, node_id, index):
        super().__init__(engine, node_id, index)
        self._timer = None
        self._inflight: set[bytes] = set()
        self._tip = self.replica.head

    def on_tx_ready(self) -> None:
        pending = self.pending_count(self._inflight)
        if pending >= self.config.max_block_txs:
            self._cut()
        elif pending and self._timer is None:
            self._timer = self.after(self.config.block_timeout, self._on_timeout)

    def _on_timeout(self) -> None:
        self._timer = None
        self._cut()

    def _cut(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None
        txs = self.pack(self._inflight)
        if not txs:
            return
        block = Block.build(
            self._tip.height + 1, self._tip.block_hash, txs, self.id, self.sim.now
        )
        self._tip = block
        self._inflight.update(tx.tx_id for tx in txs)
        self.sim.record(self.id, "pack", f"h={block.height} txs={len(txs)}")
        # packing is foreground work, like a leader's proposal in the other engines
        self.cpu.charge(self.config.work.block_cost)
        self.commit(block)
        self._inflight.difference_update(tx.tx_id for tx in block.txs)
        self.on_tx_ready()

    def on_crash(self) -> None:
        self._timer = None
        self._inflight.clear()
        self._tip = self.replica.head

    def on_recover(self) -> None:
        self._tip = self.replica.head


class SoloEngine(ConsensusEngine):
    kind = EngineKind.SOLO
    node_class = SoloNode

    def leader(self) -> str | None:
        node = self.nodes[self.node_ids[0]]
        return None if node.crashed else node.id
