"""Ordering contract shared by the Solo, Raft-like and HotStuff-like engines.

Clients submit a transaction by broadcasting it to every ordering node; each
node validates it against its CPU budget and keeps it in its mempool. The
current leader packs blocks from its mempool. Every node that commits a block
sends a ``CommitNotice`` to the origin of each transaction in it, and the
origin resolves the transaction's ``Ack`` on the first notice it receives.
Committed blocks are also announced to non-voting peer replicas.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable

from ..errors import BackpressureError, UnknownNodeError
from ..identity import KeyPair, generate_identity
from ..ledger import (
    DEFAULT_BLOCK_TIMEOUT,
    DEFAULT_MAX_BLOCK_TXS,
    Block,
    LedgerReplica,
    Transaction,
    genesis_block,
)
from ..sim.core import NodeCpu, Simulator
from ..sim.network import SimNetwork
from .messages import BlockAnnounce, ChainRequest, ChainSegment, CommitNotice, TxSubmit


class EngineKind(enum.Enum):
    SOLO = "solo"
    RAFT_LIKE = "raft"
    HOTSTUFF_LIKE = "hotstuff"


class Fault(enum.Enum):
    CRASH = "crash"
    RECOVER = "recover"
    BYZANTINE_EQUIVOCATE = "byzantine-equivocate"
    PARTITION = "partition"
    HEAL = "heal"


@dataclass(frozen=True)
class WorkModel:
    """Per-node CPU model in abstract work units.

    ``budget`` is units per simulated second (``None`` = unlimited). Every
    ordering node spends ``tx_cost`` validating each submitted transaction and
    ``block_cost`` on each block it packs or verifies.
    """

    budget: float | None = None
    tx_cost: float = 1.0
    block_cost: float = 0.0
    vote_cost: float = 0.0

    @property
    def ceiling_tps(self) -> float:
        if not self.budget:
            return float("inf")
        return self.budget / self.tx_cost


@dataclass(frozen=True)
class OrderingConfig:
    engine: EngineKind = EngineKind.SOLO
    n_consensus_nodes: int = 1
    max_block_txs: int = DEFAULT_MAX_BLOCK_TXS
    block_timeout: float = DEFAULT_BLOCK_TIMEOUT
    rotation_interval: float = 0.100
    election_timeout_range: tuple[float, float] = (0.150, 0.300)
    heartbeat_interval: float = 0.050
    mempool_capacity: int = 100_000
    work: WorkModel = field(default_factory=WorkModel)

    def __post_init__(self):
        if self.n_consensus_nodes < 1:
            raise ValueError("need at least one consensus node")
        if self.engine is EngineKind.SOLO and self.n_consensus_nodes != 1:
            raise ValueError("solo ordering uses exactly one node")
        if self.max_block_txs < 1:
            raise ValueError("max_block_txs must be >= 1")
        lo, hi = self.election_timeout_range
        if not 0 < lo <= hi:
            raise ValueError("election_timeout_range must satisfy 0 < lo <= hi")

    @property
    def fault_tolerance(self) -> int:
        """Largest f this engine tolerates with n nodes."""
        n = self.n_consensus_nodes
        if self.engine is EngineKind.RAFT_LIKE:
            return (n - 1) // 2
        if self.engine is EngineKind.HOTSTUFF_LIKE:
            return (n - 1) // 3
        return 0

    @property
    def block_interval(self) -> float:
        if self.engine is EngineKind.HOTSTUFF_LIKE:
            return self.rotation_interval
        return self.block_timeout


@dataclass(eq=False)
class Ack:
    """Handle returned by ``submit``; resolved when a commit notice arrives."""

    tx_id: bytes
    origin: str
    submit_time: float
    commit_time: float | None = None
    height: int | None = None
    outcome: str | None = None
    callbacks: list[Callable[["Ack"], None]] = field(default_factory=list, repr=False)

    @property
    def done(self) -> bool:
        return self.commit_time is not None

    @property
    def applied(self) -> bool:
        return self.done and self.outcome is None

    @property
    def latency(self) -> float | None:
        return None if self.commit_time is None else self.commit_time - self.submit_time


class ConsensusNode:
    """State and plumbing common to every ordering node."""

    def __init__(self, engine: "ConsensusEngine", node_id: str, index: int):
        self.engine = engine
        self.id = node_id
        self.index = index
        self.sim: Simulator = engine.sim
        self.net: SimNetwork = engine.net
        self.config = engine.config
        self.replica = LedgerReplica(engine.genesis)
        self.cpu = NodeCpu(self.sim, self.config.work.budget)
        self.keypair: KeyPair = generate_identity(f"consensus-node/{node_id}".encode()).keypair
        self.mempool: dict[bytes, Transaction] = {}
        self.origins: dict[bytes, str] = {}
        self.committed_ids: set[bytes] = set()
        self.crashed = False
        self.byzantine = False
        self._epoch = 0
        self.net.register(node_id, self.receive)

    # -- timers that die with the process -------------------------------------

    def after(self, delay: float, fn: Callable, *args):
        return self.sim.schedule(delay, self._fire, self._epoch, fn, args)

    def at(self, time: float, fn: Callable, *args):
        return self.sim.at(max(time, self.sim.now), self._fire, self._epoch, fn, args)

    def _fire(self, epoch: int, fn: Callable, args: tuple) -> None:
        if not self.crashed and epoch == self._epoch:
            fn(*args)

    # -- messages ------------------------------------------------------------

    def receive(self, src: str, msg) -> None:
        if self.crashed:
            return
        if isinstance(msg, TxSubmit):
            self.cpu.run(self.config.work.tx_cost, self._admit_checked, self._epoch, msg)
        elif isinstance(msg, ChainRequest):
            seg = tuple(self.replica.chain[msg.from_height:msg.from_height + 64])
            if seg:
                self.send(src, ChainSegment(seg))
        else:
            self.handle(src, msg)

    def _admit_checked(self, epoch: int, msg: TxSubmit) -> None:
        if self.crashed or epoch != self._epoch:
            return
        tx_id = msg.tx.tx_id
        if tx_id in self.committed_ids or tx_id in self.mempool:
            return
        self.mempool[tx_id] = msg.tx
        self.origins[tx_id] = msg.origin
        self.on_tx_ready()

    def send(self, dst: str, msg) -> None:
        if dst == self.id:
            self.sim.schedule(0.0, self.receive, self.id, msg)
        else:
            self.net.send(self.id, dst, msg)

    def broadcast(self, msg, include_self: bool = False) -> None:
        self.net.broadcast(self.id, self.engine.node_ids, msg)
        if include_self:
            self.sim.schedule(0.0, self.receive, self.id, msg)

    def pack(self, exclude: set[bytes] = frozenset()) -> list[Transaction]:
        limit = self.config.max_block_txs
        out = []
        for tx_id, tx in self.mempool.items():
            if tx_id in exclude:
                continue
            out.append(tx)
            if len(out) >= limit:
                break
        return out

    def pending_count(self, exclude: set[bytes] = frozenset()) -> int:
        if not exclude:
            return len(self.mempool)
        return sum(1 for t in self.mempool if t not in exclude)

    def commit(self, block: Block) -> None:
        """Append a decided block to the local chain and tell everyone."""
        outcomes = self.replica.append(block)
        by_origin: dict[str, tuple[list, list]] = {}
        for tx, outcome in zip(block.txs, outcomes):
            tx_id = tx.tx_id
            self.committed_ids.add(tx_id)
            self.mempool.pop(tx_id, None)
            origin = self.origins.pop(tx_id, None)
            if origin is None:
                continue
            ids, outs = by_origin.setdefault(origin, ([], []))
            ids.append(tx_id)
            outs.append(outcome)
        for origin, (ids, outs) in by_origin.items():
            self.net.send(
                self.id, origin,
                CommitNotice(self.id, block.height, block.block_hash, tuple(ids), tuple(outs)),
            )
        if self.engine.peer_ids:
            self.net.broadcast(self.id, self.engine.peer_ids, BlockAnnounce(block))
        self.engine._node_committed(self, block, outcomes)

    # -- hooks for engines -----------------------------------------------------

    def start(self) -> None:
        pass

    def on_tx_ready(self) -> None:
        pass

    def handle(self, src: str, msg) -> None:
        pass

    def on_crash(self) -> None:
        pass

    def on_recover(self) -> None:
        pass

    def crash(self) -> None:
        self.crashed = True
        self._epoch += 1
        self.mempool.clear()
        self.origins.clear()
        self.cpu.free_at = self.sim.now
        self.on_crash()

    def recover(self) -> None:
        self.crashed = False
        self._epoch += 1
        self.on_recover()


class PeerReplica:
    """Non-voting full replica fed by block announcements.

    A block at the next height is accepted once ``threshold`` distinct ordering
    nodes announced the same hash (1 for crash-fault engines, f+1 for BFT).
    """

    def __init__(self, engine: "ConsensusEngine", peer_id: str, threshold: int):
        self.engine = engine
        self.id = peer_id
        self.threshold = threshold
        self.replica = LedgerReplica(engine.genesis)
        self.crashed = False
        self._seen: dict[int, dict[bytes, set[str]]] = {}
        self._blocks: dict[bytes, Block] = {}
        self._requested: dict[str, int] = {}
        engine.net.register(peer_id, self.receive)

    def receive(self, src: str, msg) -> None:
        if self.crashed or src not in self.engine.nodes:
            return
        if isinstance(msg, BlockAnnounce):
            self._offer(src, msg.block)
        elif isinstance(msg, ChainSegment):
            for b in msg.blocks:
                self._offer(src, b)
        self._advance()
        nxt = self.replica.height + 1
        if self._seen and max(self._seen) > nxt and self._requested.get(src, -1) < nxt:
            self._requested[src] = nxt
            self.engine.net.send(self.id, src, ChainRequest(nxt))

    def _offer(self, src: str, block: Block) -> None:
        if block.height <= self.replica.height or block.compute_hash() != block.block_hash:
            return
        self._blocks[block.block_hash] = block
        self._seen.setdefault(block.height, {}).setdefault(block.block_hash, set()).add(src)

    def _advance(self) -> None:
        while True:
            nxt = self.replica.height + 1
            votes = self._seen.get(nxt)
            if not votes:
                return
            chosen = None
            for h in sorted(votes):
                if len(votes[h]) >= self.threshold and self._blocks[h].prev_hash == self.replica.head.block_hash:
                    chosen = h
                    break
            if chosen is None:
                return
            block = self._blocks[chosen]
            outcomes = self.replica.append(block)
            for h in votes:
                self._blocks.pop(h, None)
            del self._seen[nxt]
            self.engine._node_committed(self, block, outcomes)

    def crash(self) -> None:
        self.crashed = True

    def recover(self) -> None:
        self.crashed = False
        self._requested.clear()


class ConsensusEngine:
    """Facade over a group of ordering nodes running one protocol."""

    kind: EngineKind
    node_class: type[ConsensusNode] = ConsensusNode

    def __init__(
        self,
        sim: Simulator,
        net: SimNetwork,
        config: OrderingConfig,
        *,
        genesis: Block | None = None,
        node_prefix: str = "consensus",
    ):
        self.sim = sim
        self.net = net
        self.config = config
        self.genesis = genesis or genesis_block()
        self.node_ids = [f"{node_prefix}-{i}" for i in range(config.n_consensus_nodes)]
        self.nodes: dict[str, ConsensusNode] = {}
        for i, nid in enumerate(self.node_ids):
            self.nodes[nid] = self.node_class(self, nid, i)
        self.validators = {nid: n.keypair.public_key for nid, n in self.nodes.items()}
        self.peers: dict[str, PeerReplica] = {}
        self.peer_ids: list[str] = []
        self._acks: dict[bytes, Ack] = {}
        self._notice_endpoints: set[str] = set()
        self._listeners: list[Callable] = []
        self.started = False
        self.submitted = 0
        self.rejected = 0
        self.applied = 0
        self.skipped = 0

    @property
    def f(self) -> int:
        return self.config.fault_tolerance

    def peer_threshold(self) -> int:
        return 1

    def add_peer(self, peer_id: str) -> PeerReplica:
        peer = PeerReplica(self, peer_id, self.peer_threshold())
        self.peers[peer_id] = peer
        self.peer_ids.append(peer_id)
        return peer

    def start(self) -> None:
        if self.started:
            return
        self.started = True
        for node in self.nodes.values():
            node.start()

    def subscribe(self, fn: Callable) -> None:
        """Call ``fn(replica_id, block, outcomes)`` whenever any replica commits."""
        self._listeners.append(fn)

    def _node_committed(self, node, block: Block, outcomes) -> None:
        self.sim.record(node.id, "commit", f"h={block.height} txs={len(block.txs)}")
        for fn in self._listeners:
            fn(node.id, block, outcomes)

    # -- submission ----------------------------------------------------------

    @property
    def in_flight(self) -> int:
        return len(self._acks)

    def track(self, tx: Transaction, origin: str) -> Ack:
        """Register an Ack for ``tx`` without sending it anywhere."""
        if not self.started:
            raise RuntimeError("engine not started")
        if len(self._acks) >= self.config.mempool_capacity:
            self.rejected += 1
            raise BackpressureError(
                f"{len(self._acks)} transactions pending, capacity {self.config.mempool_capacity}"
            )
        if origin not in self._notice_endpoints:
            self.net.register(origin, self._on_notice, CommitNotice)
            self._notice_endpoints.add(origin)
        ack = self._acks.get(tx.tx_id)
        if ack is None:
            ack = self._acks[tx.tx_id] = Ack(tx.tx_id, origin, self.sim.now)
            self.submitted += 1
        return ack

    def dispatch(self, tx: Transaction, origin: str) -> None:
        self.net.broadcast(origin, self.node_ids, TxSubmit(tx, origin))

    def submit(self, tx: Transaction, origin: str = "client") -> Ack:
        ack = self.track(tx, origin)
        self.dispatch(tx, origin)
        return ack

    def _on_notice(self, src: str, notice: CommitNotice) -> None:
        for tx_id, outcome in zip(notice.tx_ids, notice.outcomes):
            ack = self._acks.pop(tx_id, None)
            if ack is None:
                continue
            ack.commit_time = self.sim.now
            ack.height = notice.height
            ack.outcome = outcome
            if outcome is None:
                self.applied += 1
            else:
                self.skipped += 1
            for cb in ack.callbacks:
                cb(ack)

    def wait(self, ack: Ack, timeout: float) -> bool:
        return self.sim.run(until=self.sim.now + timeout, stop=lambda: ack.done)

    # -- faults --------------------------------------------------------------

    def inject_fault(self, node_id: str, fault: Fault | str) -> None:
        fault = Fault(fault)
        target = self.nodes.get(node_id) or self.peers.get(node_id)
        if target is None:
            raise UnknownNodeError(node_id)
        self.sim.record(node_id, "fault", fault.value)
        if fault is Fault.CRASH:
            self.net.crash(node_id)
            target.crash()
        elif fault is Fault.RECOVER:
            self.net.recover(node_id)
            target.recover()
        elif fault is Fault.PARTITION:
            self.net.isolate(node_id)
        elif fault is Fault.HEAL:
            self.net.rejoin(node_id)
        elif fault is Fault.BYZANTINE_EQUIVOCATE:
            if self.kind is not EngineKind.HOTSTUFF_LIKE or node_id not in self.nodes:
                raise ValueError("equivocation is only modelled for HotStuff-like ordering nodes")
            target.byzantine = True

    # -- inspection ----------------------------------------------------------

    def honest_replicas(self) -> dict[str, LedgerReplica]:
        out = {nid: n.replica for nid, n in self.nodes.items() if not n.byzantine}
        out.update({pid: p.replica for pid, p in self.peers.items()})
        return out

    def reference_chain(self) -> list[Block]:
        """Longest committed chain among honest replicas."""
        return max(self.honest_replicas().values(), key=lambda r: r.height).chain

    def leader(self) -> str | None:
        return None


def safety_violations(chains: Iterable[list[Block]]) -> list[int]:
    """Heights at which two chains hold different blocks."""
    seen: dict[int, bytes] = {}
    bad = set()
    for chain in chains:
        for b in chain:
            prev = seen.setdefault(b.height, b.block_hash)
            if prev != b.block_hash:
                bad.add(b.height)
    return sorted(bad)
