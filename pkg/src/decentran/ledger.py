"""Hash-chained block store and the network-contract state machine.

Transactions are ordered first and validated when a block is applied; a
transaction that fails validation inside a committed block is skipped, the
same way on every replica, so replicas never diverge.

Encoded layouts (see :mod:`decentran.encoding` for the primitives)::

    Transaction  u8 kind ‖ fixed32 sender ‖ blob body ‖ u64 nonce ‖
                 time submit_time ‖ blob signature
    Block        u64 height ‖ fixed32 prev_hash ‖ u32 n ‖ n × blob(tx) ‖
                 text proposer ‖ time commit_time ‖ fixed32 block_hash
    chain dump   repeated u32 length ‖ encoded block

The signature covers the transaction encoding without the signature field;
``block_hash`` is SHA-256 over the block encoding without the hash field.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .encoding import Reader, Writer, quantize_time
from .errors import ChainBreakError, DecodeError
from .identity import (
    DIGEST_LEN,
    PUBLIC_KEY_LEN,
    BcAdd,
    KeyPair,
    derive_bcadd,
    sha256,
    verify_signature,
)

PAYLOAD_SIZE = 200
ZERO_HASH = bytes(DIGEST_LEN)
DEFAULT_MAX_BLOCK_TXS = 500
DEFAULT_BLOCK_TIMEOUT = 0.050


class TxKind(enum.IntEnum):
    IDENTITY_REGISTER = 1
    MOBILITY_UPDATE = 2
    POLICY_SET = 3
    PAYLOAD = 4


class Role(enum.IntEnum):
    UE = 0
    GNB = 1
    SERVER = 2
    HOST = 3


# -- transaction bodies ------------------------------------------------------

def identity_register_body(public_key: bytes, role: Role) -> bytes:
    return Writer().blob(public_key).u8(int(role)).getvalue()


def decode_identity_register(body: bytes) -> tuple[bytes, Role]:
    r = Reader(body)
    pk = r.blob()
    role = Role(r.u8())
    r.end()
    return pk, role


def mobility_update_body(serving_gnb: str, cell_id: int, sequence: int) -> bytes:
    return Writer().text(serving_gnb).u32(cell_id).u64(sequence).getvalue()


def decode_mobility_update(body: bytes) -> tuple[str, int, int]:
    r = Reader(body)
    gnb, cell, seq = r.text(), r.u32(), r.u64()
    r.end()
    return gnb, cell, seq


def policy_set_body(target: BcAdd, flags: int) -> bytes:
    return Writer().raw(target.value).u32(flags).getvalue()


def decode_policy_set(body: bytes) -> tuple[BcAdd, int]:
    r = Reader(body)
    target = BcAdd(r.fixed(DIGEST_LEN))
    flags = r.u32()
    r.end()
    return target, flags


# -- transactions and blocks -------------------------------------------------

@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    sender: BcAdd
    body: bytes
    nonce: int
    submit_time: float
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return (
            Writer()
            .raw(b"decentran/tx")
            .u8(int(self.kind))
            .raw(self.sender.value)
            .blob(self.body)
            .u64(self.nonce)
            .time(self.submit_time)
            .getvalue()
        )

    @cached_property
    def encoded(self) -> bytes:
        return (
            Writer()
            .u8(int(self.kind))
            .raw(self.sender.value)
            .blob(self.body)
            .u64(self.nonce)
            .time(self.submit_time)
            .blob(self.signature)
            .getvalue()
        )

    def encode(self) -> bytes:
        return self.encoded

    @cached_property
    def tx_id(self) -> bytes:
        return sha256(self.encoded)

    @classmethod
    def decode(cls, data: bytes) -> "Transaction":
        r = Reader(data)
        tx = cls._read(r)
        r.end()
        return tx

    @classmethod
    def _read(cls, r: Reader) -> "Transaction":
        try:
            kind = TxKind(r.u8())
        except ValueError as exc:
            raise DecodeError("unknown transaction kind") from exc
        return cls(
            kind=kind,
            sender=BcAdd(r.fixed(DIGEST_LEN)),
            body=r.blob(),
            nonce=r.u64(),
            submit_time=r.time(),
            signature=r.blob(),
        )


def make_transaction(
    keypair: KeyPair,
    kind: TxKind,
    body: bytes,
    nonce: int,
    submit_time: float,
) -> Transaction:
    unsigned = Transaction(
        kind=kind,
        sender=derive_bcadd(keypair.public_key),
        body=body,
        nonce=nonce,
        submit_time=quantize_time(submit_time),
    )
    return Transaction(
        kind=unsigned.kind,
        sender=unsigned.sender,
        body=unsigned.body,
        nonce=unsigned.nonce,
        submit_time=unsigned.submit_time,
        signature=keypair.sign(unsigned.signing_bytes()),
    )


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    txs: tuple[Transaction, ...]
    proposer: str
    commit_time: float
    block_hash: bytes = b""

    @classmethod
    def build(
        cls,
        height: int,
        prev_hash: bytes,
        txs: Iterable[Transaction],
        proposer: str,
        commit_time: float,
    ) -> "Block":
        draft = cls(height, prev_hash, tuple(txs), proposer, quantize_time(commit_time))
        return cls(
            draft.height, draft.prev_hash, draft.txs, draft.proposer,
            draft.commit_time, draft.compute_hash(),
        )

    def _body_writer(self) -> Writer:
        w = Writer().u64(self.height).raw(self.prev_hash).u32(len(self.txs))
        for tx in self.txs:
            w.blob(tx.encoded)
        return w.text(self.proposer).time(self.commit_time)

    def compute_hash(self) -> bytes:
        return sha256(self._body_writer().getvalue())

    @cached_property
    def encoded(self) -> bytes:
        return self._body_writer().raw(self.block_hash).getvalue()

    def encode(self) -> bytes:
        return self.encoded

    @classmethod
    def decode(cls, data: bytes) -> "Block":
        r = Reader(data)
        height = r.u64()
        prev_hash = r.fixed(DIGEST_LEN)
        n = r.u32()
        txs = tuple(Transaction.decode(r.blob()) for _ in range(n))
        proposer = r.text()
        commit_time = r.time()
        block_hash = r.fixed(DIGEST_LEN)
        r.end()
        return cls(height, prev_hash, txs, proposer, commit_time, block_hash)

    def __repr__(self) -> str:
        return (
            f"Block(h={self.height}, txs={len(self.txs)}, by={self.proposer}, "
            f"hash={self.block_hash[:4].hex()})"
        )


def genesis_block() -> Block:
    return Block.build(0, ZERO_HASH, (), "genesis", 0.0)


# -- state -------------------------------------------------------------------

@dataclass(frozen=True)
class IdentityRecord:
    bcadd: BcAdd
    public_key: bytes
    role: Role
    registered_height: int


@dataclass(frozen=True)
class MobilityRecord:
    ue: BcAdd
    serving_gnb: str
    cell_id: int
    sequence: int
    updated_at: float


@dataclass(frozen=True)
class LedgerState:
    """Registries derived from the chain; treat the mappings as read-only."""

    identity_registry: Mapping[BcAdd, IdentityRecord] = field(default_factory=dict)
    mobility_registry: Mapping[BcAdd, MobilityRecord] = field(default_factory=dict)
    policy_table: Mapping[BcAdd, int] = field(default_factory=dict)
    nonces: Mapping[BcAdd, int] = field(default_factory=dict)
    chain_height: int = 0
    head_hash: bytes = ZERO_HASH

    def identity(self, bcadd: BcAdd) -> IdentityRecord | None:
        return self.identity_registry.get(bcadd)

    def is_registered(self, bcadd: BcAdd) -> bool:
        return bcadd in self.identity_registry

    def encode(self) -> bytes:
        w = Writer().u64(self.chain_height).raw(self.head_hash)
        w.u32(len(self.identity_registry))
        for k in sorted(self.identity_registry):
            rec = self.identity_registry[k]
            w.raw(k.value).blob(rec.public_key).u8(int(rec.role)).u64(rec.registered_height)
        w.u32(len(self.mobility_registry))
        for k in sorted(self.mobility_registry):
            m = self.mobility_registry[k]
            w.raw(k.value).text(m.serving_gnb).u32(m.cell_id).u64(m.sequence).time(m.updated_at)
        w.u32(len(self.policy_table))
        for k in sorted(self.policy_table):
            w.raw(k.value).u32(self.policy_table[k])
        w.u32(len(self.nonces))
        for k in sorted(self.nonces):
            w.raw(k.value).u64(self.nonces[k])
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "LedgerState":
        r = Reader(data)
        height = r.u64()
        head = r.fixed(DIGEST_LEN)
        ids = {}
        for _ in range(r.u32()):
            k = BcAdd(r.fixed(DIGEST_LEN))
            ids[k] = IdentityRecord(k, r.blob(), Role(r.u8()), r.u64())
        mob = {}
        for _ in range(r.u32()):
            k = BcAdd(r.fixed(DIGEST_LEN))
            mob[k] = MobilityRecord(k, r.text(), r.u32(), r.u64(), r.time())
        pol = {}
        for _ in range(r.u32()):
            k = BcAdd(r.fixed(DIGEST_LEN))
            pol[k] = r.u32()
        nonces = {}
        for _ in range(r.u32()):
            k = BcAdd(r.fixed(DIGEST_LEN))
            nonces[k] = r.u64()
        r.end()
        return cls(ids, mob, pol, nonces, height, head)


def check_transaction(tx: Transaction, state: LedgerState) -> str | None:
    """Return ``None`` if ``tx`` is valid against ``state``, else a reason tag."""
    last = state.nonces.get(tx.sender)
    if last is not None and tx.nonce <= last:
        return "stale-nonce"
    if tx.kind is TxKind.IDENTITY_REGISTER:
        try:
            pk, _role = decode_identity_register(tx.body)
        except (DecodeError, ValueError):
            return "malformed-body"
        if len(pk) != PUBLIC_KEY_LEN or derive_bcadd(pk) != tx.sender:
            return "bcadd-mismatch"
        if tx.sender in state.identity_registry:
            return "already-registered"
    else:
        rec = state.identity_registry.get(tx.sender)
        if rec is None:
            return "unregistered-sender"
        pk = rec.public_key
    if not verify_signature(pk, tx.signature, tx.signing_bytes()):
        return "bad-signature"

    if tx.kind is TxKind.MOBILITY_UPDATE:
        try:
            _gnb, _cell, seq = decode_mobility_update(tx.body)
        except (DecodeError, ValueError):
            return "malformed-body"
        prev = state.mobility_registry.get(tx.sender)
        if seq != (prev.sequence if prev else 0) + 1:
            return "sequence-conflict"
    elif tx.kind is TxKind.POLICY_SET:
        try:
            target, _flags = decode_policy_set(tx.body)
        except (DecodeError, ValueError):
            return "malformed-body"
        if state.identity_registry[tx.sender].role is not Role.GNB:
            return "not-authorized"
        if target not in state.identity_registry:
            return "unknown-target"
    elif tx.kind is TxKind.PAYLOAD:
        if len(tx.body) != PAYLOAD_SIZE:
            return "bad-payload-size"
    return None


def validate_transaction(tx: Transaction, state: LedgerState) -> bool:
    return check_transaction(tx, state) is None


class _WorkingState:
    __slots__ = ("ids", "mob", "pol", "nonces", "height")

    def __init__(self, s: LedgerState):
        self.ids = dict(s.identity_registry)
        self.mob = dict(s.mobility_registry)
        self.pol = dict(s.policy_table)
        self.nonces = dict(s.nonces)
        self.height = s.chain_height

    def view(self) -> LedgerState:
        return LedgerState(self.ids, self.mob, self.pol, self.nonces, self.height)


def apply_block_with_outcomes(
    state: LedgerState, block: Block
) -> tuple[LedgerState, list[str | None]]:
    """Apply ``block`` and report the validation outcome of each transaction."""
    if block.height != state.chain_height or block.prev_hash != state.head_hash:
        raise ChainBreakError(
            f"block {block.height} does not extend head {state.chain_height - 1}"
        )
    ws = _WorkingState(state)
    outcomes: list[str | None] = []
    for tx in block.txs:
        # the working view aliases the dicts being mutated, so intra-block order counts
        reason = check_transaction(tx, ws.view())
        outcomes.append(reason)
        if reason is not None:
            continue
        ws.nonces[tx.sender] = tx.nonce
        if tx.kind is TxKind.IDENTITY_REGISTER:
            pk, role = decode_identity_register(tx.body)
            ws.ids[tx.sender] = IdentityRecord(tx.sender, pk, role, block.height)
        elif tx.kind is TxKind.MOBILITY_UPDATE:
            gnb, cell, seq = decode_mobility_update(tx.body)
            ws.mob[tx.sender] = MobilityRecord(tx.sender, gnb, cell, seq, block.commit_time)
        elif tx.kind is TxKind.POLICY_SET:
            target, flags = decode_policy_set(tx.body)
            ws.pol[target] = flags
    new = LedgerState(ws.ids, ws.mob, ws.pol, ws.nonces, block.height + 1, block.block_hash)
    return new, outcomes


def apply_block(state: LedgerState, block: Block) -> LedgerState:
    return apply_block_with_outcomes(state, block)[0]


def replay(blocks: Iterable[Block]) -> LedgerState:
    state = LedgerState()
    for b in blocks:
        state = apply_block(state, b)
    return state


def verify_chain(blocks: Sequence[Block], max_block_txs: int | None = None) -> bool:
    prev: Block | None = None
    for b in blocks:
        if b.compute_hash() != b.block_hash:
            return False
        if max_block_txs is not None and len(b.txs) > max_block_txs:
            return False
        if prev is None:
            if b.height == 0 and b.prev_hash != ZERO_HASH:
                return False
        elif b.height != prev.height + 1 or b.prev_hash != prev.block_hash:
            return False
        prev = b
    return True


def dump_chain(blocks: Iterable[Block]) -> bytes:
    w = Writer()
    for b in blocks:
        w.blob(b.encoded)
    return w.getvalue()


def load_chain(data: bytes) -> list[Block]:
    r = Reader(data)
    blocks = []
    while r.remaining:
        blocks.append(Block.decode(r.blob()))
    return blocks


def verify_dump(data: bytes) -> bool:
    """True iff ``data`` decodes to a chain that passes :func:`verify_chain`."""
    try:
        blocks = load_chain(data)
    except (DecodeError, ValueError):
        return False
    if not blocks:
        return False
    # canonical encoding: a decodable mutation re-encodes to the mutated bytes
    if dump_chain(blocks) != data:
        return False
    return verify_chain(blocks)


def write_chain(path: str | Path, blocks: Iterable[Block]) -> None:
    Path(path).write_bytes(dump_chain(blocks))


def read_chain(path: str | Path) -> list[Block]:
    return load_chain(Path(path).read_bytes())


class LedgerReplica:
    """Committed chain plus derived state held by one full node.

    Keeps the states of the last ``history`` heights so light clients can
    query the registry as of an older header.
    """

    def __init__(self, genesis: Block | None = None, history: int = 256):
        self.chain: list[Block] = []
        self.state = LedgerState()
        self._history = history
        self._states: dict[int, LedgerState] = {}
        self.append(genesis or genesis_block())

    @property
    def height(self) -> int:
        """Height of the committed head block."""
        return len(self.chain) - 1

    @property
    def head(self) -> Block:
        return self.chain[-1]

    def append(self, block: Block) -> list[str | None]:
        self.state, outcomes = apply_block_with_outcomes(self.state, block)
        self.chain.append(block)
        self._states[block.height] = self.state
        self._states.pop(block.height - self._history, None)
        return outcomes

    def state_at(self, height: int) -> LedgerState | None:
        return self._states.get(height)

    def persisted_bytes(self) -> bytes:
        """Everything this node would write to disk: chain dump and state."""
        return dump_chain(self.chain) + self.state.encode()
