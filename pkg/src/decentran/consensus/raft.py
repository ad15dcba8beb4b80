"""Raft-style crash-fault-tolerant ordering.

Log entries are whole blocks: the entry at log index ``i`` is the block at
height ``i`` and index 0 is the shared genesis block. Election timeouts are
drawn uniformly from ``election_timeout_range`` using a per-node random
stream. When two candidates collide in the same term, the one with the higher
node index steps down in favour of the lower one if that candidate's log is at
least as up to date; it forfeits its own candidacy, so it still contributes at
most one effective vote per term.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from ..encoding import Writer
from ..ledger import Block
from .base import ConsensusEngine, ConsensusNode, EngineKind
from .messages import Tag

MAX_ENTRIES_PER_APPEND = 64


class Role(enum.Enum):
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    LEADER = "leader"


@dataclass(frozen=True, eq=False)
class LogEntry:
    term: int
    block: Block


@dataclass(frozen=True, eq=False)
class RequestVote:
    term: int
    candidate: str
    last_index: int
    last_term: int

    def encode(self) -> bytes:
        return (Writer().u8(Tag.REQUEST_VOTE).u64(self.term).text(self.candidate)
                .u64(self.last_index).u64(self.last_term).getvalue())


@dataclass(frozen=True, eq=False)
class VoteReply:
    term: int
    voter: str
    granted: bool

    def encode(self) -> bytes:
        return (Writer().u8(Tag.VOTE_REPLY).u64(self.term).text(self.voter)
                .u8(int(self.granted)).getvalue())


@dataclass(frozen=True, eq=False)
class AppendEntries:
    term: int
    leader: str
    prev_index: int
    prev_term: int
    entries: tuple[LogEntry, ...]
    leader_commit: int

    def encode(self) -> bytes:
        w = (Writer().u8(Tag.APPEND_ENTRIES).u64(self.term).text(self.leader)
             .u64(self.prev_index).u64(self.prev_term).u32(len(self.entries)))
        for e in self.entries:
            w.u64(e.term).blob(e.block.encoded)
        return w.u64(self.leader_commit).getvalue()


@dataclass(frozen=True, eq=False)
class AppendReply:
    term: int
    follower: str
    success: bool
    match_index: int

    def encode(self) -> bytes:
        return (Writer().u8(Tag.APPEND_REPLY).u64(self.term).text(self.follower)
                .u8(int(self.success)).u64(self.match_index).getvalue())


class RaftNode(ConsensusNode):
    def __init__(self, engine, node_id, index):
        super().__init__(engine, node_id, index)
        self.role = Role.FOLLOWER
        self.term = 0
        self.voted_for: str | None = None
        self.log: list[LogEntry] = [LogEntry(0, self.replica.head)]
        self.commit_index = 0
        self.leader_id: str | None = None
        self.votes: set[str] = set()
        self.next_index: dict[str, int] = {}
        self.match_index: dict[str, int] = {}
        self._inflight: set[bytes] = set()
        self._election_timer = None
        self._batch_timer = None
        self._hb_timer = None
        self._rng = self.sim.rng(f"raft/{node_id}")
        n = self.config.n_consensus_nodes
        self.majority = n // 2 + 1

    # -- helpers -------------------------------------------------------------

    @property
    def last_index(self) -> int:
        return len(self.log) - 1

    @property
    def last_term(self) -> int:
        return self.log[-1].term

    def _others(self):
        return [p for p in self.engine.node_ids if p != self.id]

    def _reset_election_timer(self) -> None:
        if self._election_timer is not None:
            self._election_timer.cancel()
        lo, hi = self.config.election_timeout_range
        self._election_timer = self.after(self._rng.uniform(lo, hi), self._election_timeout)

    def _step_down(self, term: int) -> None:
        was_leader = self.role is Role.LEADER
        if term > self.term:
            self.term = term
            self.voted_for = None
        self.role = Role.FOLLOWER
        self.votes = set()
        if was_leader:
            self._cancel_batch()
            self._inflight.clear()
            self._reset_election_timer()

    def _observe(self, term: int) -> None:
        if term > self.term:
            self._step_down(term)

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        self._reset_election_timer()

    def on_crash(self) -> None:
        # term, vote and log survive; everything else is volatile
        self.role = Role.FOLLOWER
        self.votes = set()
        self.leader_id = None
        self._inflight.clear()
        self._election_timer = None
        self._batch_timer = None
        self._hb_timer = None

    def on_recover(self) -> None:
        self._reset_election_timer()

    # -- elections -----------------------------------------------------------

    def _election_timeout(self) -> None:
        self._election_timer = None
        if self.role is Role.LEADER:
            return
        self.term += 1
        self.role = Role.CANDIDATE
        self.voted_for = self.id
        self.votes = {self.id}
        self.leader_id = None
        self.sim.record(self.id, "candidate", f"term={self.term}")
        self._reset_election_timer()
        if len(self.votes) >= self.majority:
            self._become_leader()
            return
        self.broadcast(RequestVote(self.term, self.id, self.last_index, self.last_term))

    def _log_ok(self, last_index: int, last_term: int) -> bool:
        return (last_term, last_index) >= (self.last_term, self.last_index)

    def _on_request_vote(self, src: str, msg: RequestVote) -> None:
        self._observe(msg.term)
        granted = False
        if msg.term == self.term and self._log_ok(msg.last_index, msg.last_term):
            if self.voted_for in (None, msg.candidate):
                granted = True
            elif (
                self.role is Role.CANDIDATE
                and self.voted_for == self.id
                and self.engine.nodes[msg.candidate].index < self.index
            ):
                self.role = Role.FOLLOWER
                self.votes = set()
                granted = True
        if granted:
            self.voted_for = msg.candidate
            self._reset_election_timer()
        self.send(src, VoteReply(self.term, self.id, granted))

    def _on_vote_reply(self, src: str, msg: VoteReply) -> None:
        self._observe(msg.term)
        if self.role is not Role.CANDIDATE or msg.term != self.term or not msg.granted:
            return
        self.votes.add(msg.voter)
        if len(self.votes) >= self.majority:
            self._become_leader()

    def _become_leader(self) -> None:
        self.role = Role.LEADER
        self.leader_id = self.id
        if self._election_timer is not None:
            self._election_timer.cancel()
            self._election_timer = None
        self.sim.record(self.id, "leader", f"term={self.term}")
        self.next_index = {p: len(self.log) for p in self._others()}
        self.match_index = {p: 0 for p in self._others()}
        self._inflight = {
            tx.tx_id for e in self.log[self.commit_index + 1:] for tx in e.block.txs
        }
        if self._hb_timer is not None:
            self._hb_timer.cancel()
        if self.last_index > self.commit_index:
            # an entry from the new term is needed before older ones can commit
            self._cut(allow_empty=True)
        self._heartbeat()
        self.on_tx_ready()

    # -- replication ---------------------------------------------------------

    def _heartbeat(self) -> None:
        if self.role is not Role.LEADER:
            return
        for p in self._others():
            self._send_append(p)
        self._hb_timer = self.after(self.config.heartbeat_interval, self._heartbeat)

    def _send_append(self, peer: str) -> None:
        nxt = self.next_index[peer]
        entries = tuple(self.log[nxt:nxt + MAX_ENTRIES_PER_APPEND])
        prev = nxt - 1
        self.net.send(
            self.id, peer,
            AppendEntries(self.term, self.id, prev, self.log[prev].term, entries, self.commit_index),
        )
        self.next_index[peer] = nxt + len(entries)

    def _on_append(self, src: str, msg: AppendEntries) -> None:
        self._observe(msg.term)
        if msg.term < self.term:
            self.send(src, AppendReply(self.term, self.id, False, self.last_index))
            return
        if self.role is not Role.FOLLOWER:
            self._step_down(msg.term)
        self.leader_id = msg.leader
        self._reset_election_timer()
        prev = msg.prev_index
        if prev > self.last_index or self.log[prev].term != msg.prev_term:
            hint = min(self.last_index, prev - 1)
            self.send(src, AppendReply(self.term, self.id, False, max(hint, self.commit_index)))
            return
        for i, entry in enumerate(msg.entries):
            idx = prev + 1 + i
            if idx <= self.last_index:
                if self.log[idx].term == entry.term:
                    continue
                assert idx > self.commit_index, "raft safety: truncating committed entry"
                del self.log[idx:]
            self.log.append(entry)
            self.cpu.charge(self.config.work.block_cost)
        match = prev + len(msg.entries)
        if msg.leader_commit > self.commit_index:
            self._apply_to(min(msg.leader_commit, match))
        self.send(src, AppendReply(self.term, self.id, True, match))

    def _on_append_reply(self, src: str, msg: AppendReply) -> None:
        self._observe(msg.term)
        if self.role is not Role.LEADER or msg.term != self.term:
            return
        f = msg.follower
        if msg.success:
            if msg.match_index > self.match_index[f]:
                self.match_index[f] = msg.match_index
            self._advance_commit()
            if self.next_index[f] <= self.last_index:
                self._send_append(f)
        else:
            self.next_index[f] = max(1, min(self.next_index[f] - 1, msg.match_index + 1))
            self._send_append(f)

    def _advance_commit(self) -> None:
        for n in range(self.last_index, self.commit_index, -1):
            if self.log[n].term != self.term:
                break
            count = 1 + sum(1 for m in self.match_index.values() if m >= n)
            if count >= self.majority:
                self._apply_to(n)
                return

    def _apply_to(self, index: int) -> None:
        while self.commit_index < index:
            self.commit_index += 1
            block = self.log[self.commit_index].block
            self.commit(block)
            if self.role is Role.LEADER:
                self._inflight.difference_update(tx.tx_id for tx in block.txs)

    # -- batching ------------------------------------------------------------

    def on_tx_ready(self) -> None:
        if self.role is not Role.LEADER:
            return
        pending = self.pending_count(self._inflight)
        if pending >= self.config.max_block_txs:
            self._cut()
        elif pending and self._batch_timer is None:
            self._batch_timer = self.after(self.config.block_timeout, self._on_batch_timeout)

    def _on_batch_timeout(self) -> None:
        self._batch_timer = None
        if self.role is Role.LEADER:
            self._cut()

    def _cancel_batch(self) -> None:
        if self._batch_timer is not None:
            self._batch_timer.cancel()
            self._batch_timer = None

    def _cut(self, allow_empty: bool = False) -> None:
        self._cancel_batch()
        txs = self.pack(self._inflight)
        if not txs and not allow_empty:
            return
        tip = self.log[-1].block
        block = Block.build(tip.height + 1, tip.block_hash, txs, self.id, self.sim.now)
        self.log.append(LogEntry(self.term, block))
        self._inflight.update(tx.tx_id for tx in txs)
        self.cpu.charge(self.config.work.block_cost)
        self.sim.record(self.id, "pack", f"h={block.height} txs={len(txs)} term={self.term}")
        for p in self._others():
            self._send_append(p)
        if self.majority == 1:
            self._advance_commit()
        self.on_tx_ready()

    def handle(self, src: str, msg) -> None:
        if isinstance(msg, AppendEntries):
            self._on_append(src, msg)
        elif isinstance(msg, AppendReply):
            self._on_append_reply(src, msg)
        elif isinstance(msg, RequestVote):
            self._on_request_vote(src, msg)
        elif isinstance(msg, VoteReply):
            self._on_vote_reply(src, msg)


class RaftEngine(ConsensusEngine):
    kind = EngineKind.RAFT_LIKE
    node_class = RaftNode

    def leader(self) -> str | None:
        live = [n for n in self.nodes.values() if n.role is Role.LEADER and not n.crashed]
        if not live:
            return None
        return max(live, key=lambda n: n.term).id
