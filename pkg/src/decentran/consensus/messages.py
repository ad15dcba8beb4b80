"""Wire messages exchanged by ordering nodes, clients and peers.

Each message encodes as ``u8 tag ‖ fields`` using the ledger encoding.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from ..encoding import Writer
from ..ledger import Block, Transaction


class Tag(enum.IntEnum):
    TX_SUBMIT = 1
    COMMIT_NOTICE = 2
    BLOCK_ANNOUNCE = 3
    CHAIN_REQUEST = 4
    CHAIN_SEGMENT = 5
    REQUEST_VOTE = 10
    VOTE_REPLY = 11
    APPEND_ENTRIES = 12
    APPEND_REPLY = 13
    NEW_VIEW = 20
    PROPOSAL = 21
    VOTE = 22
    PHASE = 23
    FETCH_REQUEST = 24
    FETCH_RESPONSE = 25


class Phase(enum.IntEnum):
    PREPARE = 1
    PRECOMMIT = 2
    COMMIT = 3
    DECIDE = 4


@dataclass(frozen=True, eq=False)
class TxSubmit:
    tx: Transaction
    origin: str

    def encode(self) -> bytes:
        return Writer().u8(Tag.TX_SUBMIT).blob(self.tx.encoded).text(self.origin).getvalue()


@dataclass(frozen=True, eq=False)
class CommitNotice:
    node: str
    height: int
    block_hash: bytes
    tx_ids: tuple[bytes, ...]
    outcomes: tuple[str | None, ...]

    def encode(self) -> bytes:
        w = Writer().u8(Tag.COMMIT_NOTICE).text(self.node).u64(self.height).raw(self.block_hash)
        w.u32(len(self.tx_ids))
        for tx_id, outcome in zip(self.tx_ids, self.outcomes):
            w.raw(tx_id).text(outcome or "")
        return w.getvalue()


@dataclass(frozen=True, eq=False)
class BlockAnnounce:
    block: Block

    def encode(self) -> bytes:
        return Writer().u8(Tag.BLOCK_ANNOUNCE).blob(self.block.encoded).getvalue()


@dataclass(frozen=True, eq=False)
class ChainRequest:
    from_height: int

    def encode(self) -> bytes:
        return Writer().u8(Tag.CHAIN_REQUEST).u64(self.from_height).getvalue()


@dataclass(frozen=True, eq=False)
class ChainSegment:
    blocks: tuple[Block, ...]

    def encode(self) -> bytes:
        w = Writer().u8(Tag.CHAIN_SEGMENT).u32(len(self.blocks))
        for b in self.blocks:
            w.blob(b.encoded)
        return w.getvalue()
