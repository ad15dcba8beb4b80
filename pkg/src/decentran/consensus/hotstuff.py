"""HotStuff-style Byzantine-fault-tolerant ordering with a fixed pacemaker.

View ``v`` starts at simulated time ``v * rotation_interval`` on every node
and is led by node ``v mod n``. A leader only packs a block when its view
begins, which is what makes idle-load latency at least a rotation wait.

Each view runs the three voting phases of basic HotStuff:

1. every replica sends its highest prepare QC to the leader (NEW-VIEW);
2. after n-f of them the leader proposes a block extending the highest QC;
3. replicas vote PREPARE if the proposal extends their locked block or
   carries a QC newer than their lock;
4. 2f+1 votes form a QC, broadcast as PRECOMMIT, then COMMIT (replicas lock
   here), then DECIDE, on which the block and its ancestors commit.

Votes are Ed25519 signatures over ``(block_hash, view, phase)``; a QC's
aggregate signature is the concatenation of its members' signatures.
Replicas missing a block fetch it from the sender; a fetched block is trusted
only by its hash, which a QC or a descendant's parent link pins down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..encoding import Writer
from ..identity import verify_signature
from ..ledger import Block
from .base import ConsensusEngine, ConsensusNode, EngineKind
from .messages import Phase, Tag

MAX_FETCH_BLOCKS = 64


def vote_message(block_hash: bytes, view: int, phase: Phase) -> bytes:
    return Writer().raw(b"decentran/vote").raw(block_hash).u64(view).u8(int(phase)).getvalue()


@dataclass(frozen=True, eq=False)
class QuorumCertificate:
    block_hash: bytes
    view: int
    phase: Phase
    signer_set: tuple[str, ...] = ()
    signatures: tuple[bytes, ...] = ()

    @property
    def aggregate_signature(self) -> bytes:
        return b"".join(self.signatures)

    def encode(self) -> bytes:
        w = Writer().raw(self.block_hash).u64(self.view).u8(int(self.phase))
        w.u32(len(self.signer_set))
        for s in self.signer_set:
            w.text(s)
        return w.blob(self.aggregate_signature).getvalue()


def genesis_qc(genesis: Block) -> QuorumCertificate:
    return QuorumCertificate(genesis.block_hash, 0, Phase.PREPARE)


def verify_qc(
    qc: QuorumCertificate,
    validators: dict[str, bytes],
    quorum: int,
    genesis_hash: bytes,
) -> bool:
    if qc.view == 0:
        return qc.block_hash == genesis_hash and qc.phase is Phase.PREPARE
    signers = qc.signer_set
    if len(signers) < quorum or len(set(signers)) != len(signers):
        return False
    if len(qc.signatures) != len(signers):
        return False
    msg = vote_message(qc.block_hash, qc.view, qc.phase)
    for s, sig in zip(signers, qc.signatures):
        pk = validators.get(s)
        if pk is None or not verify_signature(pk, sig, msg):
            return False
    return True


@dataclass(frozen=True, eq=False)
class NewView:
    view: int
    qc: QuorumCertificate

    def encode(self) -> bytes:
        return Writer().u8(Tag.NEW_VIEW).u64(self.view).blob(self.qc.encode()).getvalue()


@dataclass(frozen=True, eq=False)
class Proposal:
    view: int
    block: Block
    justify: QuorumCertificate

    def encode(self) -> bytes:
        return (Writer().u8(Tag.PROPOSAL).u64(self.view).blob(self.block.encoded)
                .blob(self.justify.encode()).getvalue())


@dataclass(frozen=True, eq=False)
class Vote:
    view: int
    phase: Phase
    block_hash: bytes
    voter: str
    signature: bytes

    def encode(self) -> bytes:
        return (Writer().u8(Tag.VOTE).u64(self.view).u8(int(self.phase)).raw(self.block_hash)
                .text(self.voter).blob(self.signature).getvalue())


@dataclass(frozen=True, eq=False)
class PhaseMessage:
    view: int
    phase: Phase
    qc: QuorumCertificate

    def encode(self) -> bytes:
        return (Writer().u8(Tag.PHASE).u64(self.view).u8(int(self.phase))
                .blob(self.qc.encode()).getvalue())


@dataclass(frozen=True, eq=False)
class FetchRequest:
    want_hash: bytes
    have_height: int

    def encode(self) -> bytes:
        return Writer().u8(Tag.FETCH_REQUEST).raw(self.want_hash).u64(self.have_height).getvalue()


@dataclass(frozen=True, eq=False)
class FetchResponse:
    blocks: tuple[Block, ...]

    def encode(self) -> bytes:
        w = Writer().u8(Tag.FETCH_RESPONSE).u32(len(self.blocks))
        for b in self.blocks:
            w.blob(b.encoded)
        return w.getvalue()


# phase message kind -> phase of the QC it carries
_CARRIES = {
    Phase.PRECOMMIT: Phase.PREPARE,
    Phase.COMMIT: Phase.PRECOMMIT,
    Phase.DECIDE: Phase.COMMIT,
}
_NEXT = {Phase.PREPARE: Phase.PRECOMMIT, Phase.PRECOMMIT: Phase.COMMIT, Phase.COMMIT: Phase.DECIDE}


@dataclass
class _LeaderView:
    new_views: dict[str, QuorumCertificate] = field(default_factory=dict)
    votes: dict[tuple[Phase, bytes], dict[str, bytes]] = field(default_factory=dict)
    proposed: bool = False
    formed: set[Phase] = field(default_factory=set)


class HotStuffNode(ConsensusNode):
    def __init__(self, engine, node_id, index):
        super().__init__(engine, node_id, index)
        g = self.replica.head
        self.blocks: dict[bytes, Block] = {g.block_hash: g}
        self.committed_hashes: set[bytes] = {g.block_hash}
        self.view = 0
        self.prepare_qc = genesis_qc(g)
        self.locked_qc = self.prepare_qc
        self.voted: set[tuple[int, Phase]] = set()
        self._lead: dict[int, _LeaderView] = {}
        self._pending_decide: bytes | None = None
        self._fetching: set[bytes] = set()
        self._rng = self.sim.rng(f"hotstuff/{node_id}")
        n = self.config.n_consensus_nodes
        self.quorum = n - self.config.fault_tolerance
        self.safety_conflicts = 0

    # -- pacemaker -----------------------------------------------------------

    def leader_of(self, view: int) -> str:
        ids = self.engine.node_ids
        return ids[view % len(ids)]

    def _schedule_next_view(self) -> None:
        r = self.config.rotation_interval
        nxt = int(self.sim.now / r + 1e-9) + 1
        self.at(nxt * r, self._enter_view, nxt)

    def start(self) -> None:
        self._schedule_next_view()

    def on_recover(self) -> None:
        self._fetching.clear()
        self._schedule_next_view()

    def _enter_view(self, view: int) -> None:
        self.view = view
        self._lead = {v: s for v, s in self._lead.items() if v >= view}
        self._schedule_next_view()
        self._to_leader(view, NewView(view, self.prepare_qc))

    def _to_leader(self, view: int, msg) -> None:
        self.send(self.leader_of(view), msg)

    # -- helpers -------------------------------------------------------------

    def _qc_ok(self, qc: QuorumCertificate) -> bool:
        return verify_qc(qc, self.engine.validators, self.quorum, self.engine.genesis.block_hash)

    def _extends(self, block: Block, ancestor_hash: bytes) -> bool:
        b = block
        while b is not None:
            if b.block_hash == ancestor_hash:
                return True
            if b.height == 0:
                return False
            b = self.blocks.get(b.prev_hash)
        return False

    def _uncommitted_branch(self, tip: Block) -> list[Block] | None:
        """Blocks from the committed head (exclusive) up to ``tip``, or None if a gap."""
        path = []
        b = tip
        while b.block_hash not in self.committed_hashes:
            path.append(b)
            parent = self.blocks.get(b.prev_hash)
            if parent is None:
                return None
            b = parent
        path.reverse()
        return path

    def _sign_vote(self, view: int, phase: Phase, block_hash: bytes) -> Vote:
        sig = self.keypair.sign(vote_message(block_hash, view, phase))
        return Vote(view, phase, block_hash, self.id, sig)

    def _vote(self, view: int, phase: Phase, block_hash: bytes) -> None:
        self.voted.add((view, phase))
        self._to_leader(view, self._sign_vote(view, phase, block_hash))

    def _fetch(self, src: str, want: bytes) -> None:
        if want in self._fetching or src == self.id:
            return
        self._fetching.add(want)
        self.send(src, FetchRequest(want, self.replica.height))

    # -- leader side ---------------------------------------------------------

    def _on_new_view(self, src: str, msg: NewView) -> None:
        if msg.view != self.view or self.leader_of(msg.view) != self.id:
            return
        if not self._qc_ok(msg.qc):
            return
        lv = self._lead.setdefault(msg.view, _LeaderView())
        lv.new_views[src] = msg.qc
        if not lv.proposed and len(lv.new_views) >= self.quorum:
            self._propose(msg.view, lv)

    def _propose(self, view: int, lv: _LeaderView) -> None:
        high = max(lv.new_views.values(), key=lambda q: q.view)
        if high.view > self.prepare_qc.view:
            self.prepare_qc = high
        parent = self.blocks.get(high.block_hash)
        if parent is None:
            self._fetch(max(lv.new_views, key=lambda s: lv.new_views[s].view), high.block_hash)
            return
        branch = self._uncommitted_branch(parent)
        if branch is None:
            return
        inflight = {tx.tx_id for b in branch for tx in b.txs}
        txs = self.pack(inflight)
        if not txs and not branch:
            return
        lv.proposed = True
        block = Block.build(parent.height + 1, parent.block_hash, txs, self.id, self.sim.now)
        self.cpu.charge(self.config.work.block_cost)
        self.sim.record(self.id, "propose", f"view={view} h={block.height} txs={len(txs)}")
        if not self.byzantine:
            self.broadcast(Proposal(view, block, high), include_self=True)
            return
        # equivocation: a conflicting twin goes to a random subset of replicas
        twin = Block.build(
            parent.height + 1, parent.block_hash, txs[::-1] if len(txs) > 1 else txs,
            self.id, self.sim.now + 1e-6,
        )
        others = [p for p in self.engine.node_ids if p != self.id]
        self._rng.shuffle(others)
        cut = self._rng.randint(0, len(others))
        self.sim.record(self.id, "equivocate", f"view={view} h={block.height} split={cut}/{len(others)}")
        for p in others[:cut]:
            self.net.send(self.id, p, Proposal(view, block, high))
        for p in others[cut:]:
            self.net.send(self.id, p, Proposal(view, twin, high))
        for b in (block, twin):
            self.blocks[b.block_hash] = b
            self._collect(self._sign_vote(view, Phase.PREPARE, b.block_hash))
        self.voted.add((view, Phase.PREPARE))

    def _on_vote(self, src: str, vote: Vote) -> None:
        if vote.voter != src or vote.view != self.view or self.leader_of(vote.view) != self.id:
            return
        pk = self.engine.validators.get(vote.voter)
        if pk is None or not verify_signature(
            pk, vote.signature, vote_message(vote.block_hash, vote.view, vote.phase)
        ):
            return
        self.cpu.charge(self.config.work.vote_cost)
        self._collect(vote)

    def _collect(self, vote: Vote) -> None:
        lv = self._lead.setdefault(vote.view, _LeaderView())
        bucket = lv.votes.setdefault((vote.phase, vote.block_hash), {})
        bucket[vote.voter] = vote.signature
        if vote.phase in lv.formed or len(bucket) < self.quorum:
            return
        lv.formed.add(vote.phase)
        order = {nid: i for i, nid in enumerate(self.engine.node_ids)}
        signers = tuple(sorted(bucket, key=order.__getitem__))
        qc = QuorumCertificate(
            vote.block_hash, vote.view, vote.phase, signers, tuple(bucket[s] for s in signers)
        )
        self.broadcast(PhaseMessage(vote.view, _NEXT[vote.phase], qc), include_self=True)

    # -- replica side --------------------------------------------------------

    def _on_proposal(self, src: str, msg: Proposal) -> None:
        v = msg.view
        if src != self.leader_of(v) or v != self.view or (v, Phase.PREPARE) in self.voted:
            return
        block, qc = msg.block, msg.justify
        if block.compute_hash() != block.block_hash or block.prev_hash != qc.block_hash:
            return
        if qc.phase is not Phase.PREPARE or not self._qc_ok(qc):
            return
        parent = self.blocks.get(qc.block_hash)
        if parent is None:
            self._fetch(src, qc.block_hash)
            return
        if block.height != parent.height + 1:
            return
        self.cpu.charge(self.config.work.block_cost)
        self.blocks[block.block_hash] = block
        if qc.view > self.prepare_qc.view:
            self.prepare_qc = qc
        safe = self._extends(block, self.locked_qc.block_hash) or qc.view > self.locked_qc.view
        if safe:
            self._vote(v, Phase.PREPARE, block.block_hash)

    def _on_phase(self, src: str, msg: PhaseMessage) -> None:
        v, qc = msg.view, msg.qc
        if src != self.leader_of(v) or v != self.view:
            return
        if qc.view != v or qc.phase is not _CARRIES[msg.phase] or not self._qc_ok(qc):
            return
        if qc.block_hash not in self.blocks:
            self._fetch(src, qc.block_hash)
        if msg.phase is Phase.PRECOMMIT:
            if qc.view > self.prepare_qc.view:
                self.prepare_qc = qc
            if (v, Phase.PRECOMMIT) not in self.voted:
                self._vote(v, Phase.PRECOMMIT, qc.block_hash)
        elif msg.phase is Phase.COMMIT:
            self.locked_qc = qc
            if (v, Phase.COMMIT) not in self.voted:
                self._vote(v, Phase.COMMIT, qc.block_hash)
        else:
            self._decide(src, qc.block_hash)

    def _decide(self, src: str, block_hash: bytes) -> None:
        if block_hash in self.committed_hashes:
            return
        tip = self.blocks.get(block_hash)
        branch = None if tip is None else self._uncommitted_branch(tip)
        if branch is None:
            self._pending_decide = block_hash
            missing = block_hash if tip is None else self._first_gap(tip)
            self._fetch(src, missing)
            return
        head = self.replica.height
        if branch and branch[0].height != head + 1:
            # the decided branch does not extend our committed head
            self.safety_conflicts += 1
            self.sim.record(self.id, "safety-conflict", f"h={branch[0].height}")
            return
        for b in branch:
            self.commit(b)
            self.committed_hashes.add(b.block_hash)
        if self._pending_decide == block_hash:
            self._pending_decide = None

    def _first_gap(self, tip: Block) -> bytes:
        b = tip
        while True:
            parent = self.blocks.get(b.prev_hash)
            if parent is None:
                return b.prev_hash
            if parent.block_hash in self.committed_hashes:
                return b.block_hash
            b = parent

    def _on_fetch_request(self, src: str, req: FetchRequest) -> None:
        out = []
        b = self.blocks.get(req.want_hash)
        while b is not None and b.height > req.have_height and len(out) < MAX_FETCH_BLOCKS:
            out.append(b)
            b = self.blocks.get(b.prev_hash)
        if out:
            out.reverse()
            self.send(src, FetchResponse(tuple(out)))

    def _on_fetch_response(self, src: str, resp: FetchResponse) -> None:
        for b in resp.blocks:
            if b.compute_hash() == b.block_hash:
                self.blocks.setdefault(b.block_hash, b)
                self._fetching.discard(b.block_hash)
        self._fetching.clear()
        if self._pending_decide is not None:
            self._decide(src, self._pending_decide)

    def handle(self, src: str, msg) -> None:
        if isinstance(msg, Vote):
            self._on_vote(src, msg)
        elif isinstance(msg, PhaseMessage):
            self._on_phase(src, msg)
        elif isinstance(msg, Proposal):
            self._on_proposal(src, msg)
        elif isinstance(msg, NewView):
            self._on_new_view(src, msg)
        elif isinstance(msg, FetchRequest):
            self._on_fetch_request(src, msg)
        elif isinstance(msg, FetchResponse):
            self._on_fetch_response(src, msg)


class HotStuffEngine(ConsensusEngine):
    kind = EngineKind.HOTSTUFF_LIKE
    node_class = HotStuffNode

    def peer_threshold(self) -> int:
        return self.f + 1

    def leader(self) -> str | None:
        node = next(iter(self.nodes.values()))
        return node.leader_of(max(n.view for n in self.nodes.values()))
