"""Ledger-backed UE location registry and cross-gNB handover.

Attach and handover are the same operation: the UE signs a MobilityUpdate
with ``sequence = committed + 1`` and submits it through the target gNB's
ledger tier. The first update ordered for a sequence wins; a loser is retried
once with a fresh sequence unless another update for the same UE committed
after it was requested, in which case it is aborted as superseded.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .auth import HandshakeSession
from .errors import (
    CommitTimeoutError,
    NotFoundError,
    SequenceConflictError,
    UnauthenticatedAttachError,
)
from .identity import BcAdd, IdentityBundle
from .ledger import (
    MobilityRecord,
    TxKind,
    decode_mobility_update,
    make_transaction,
    mobility_update_body,
)
from .tiers import TierHandle

DEFAULT_COMMIT_TIMEOUT = 5.0
_RETRYABLE = {"sequence-conflict", "stale-nonce"}


class HandoverOutcome(enum.Enum):
    COMPLETED = "completed"
    ABORTED = "aborted"


@dataclass
class HandoverEvent:
    ue: BcAdd
    source_gnb: str | None
    target_gnb: str
    request_time: float
    commit_time: float | None = None
    outcome: HandoverOutcome | None = None
    reason: str | None = None
    sequence: int | None = None
    attempts: int = 0

    @property
    def done(self) -> bool:
        return self.outcome is not None

    @property
    def latency(self) -> float | None:
        return None if self.commit_time is None else self.commit_time - self.request_time


@dataclass
class _UeContext:
    bundle: IdentityBundle
    nonce: int
    amf_bypass: bool = False
    origin: str = ""
    last_sequence: int = 0


@dataclass(eq=False)
class _Request:
    event: HandoverEvent
    cell_id: int
    via: TierHandle
    callbacks: list[Callable[[HandoverEvent], None]] = field(default_factory=list)
    timer: object = None


class ForwardingTable:
    """Which UEs each gNB currently serves, updated from committed blocks."""

    def __init__(self):
        self.attached: dict[str, set[BcAdd]] = {}
        self.serving: dict[BcAdd, str] = {}

    def move(self, ue: BcAdd, gnb: str) -> str | None:
        old = self.serving.get(ue)
        if old is not None:
            self.attached.get(old, set()).discard(ue)
        self.serving[ue] = gnb
        self.attached.setdefault(gnb, set()).add(ue)
        return old

    def serves(self, gnb: str, ue: BcAdd) -> bool:
        return ue in self.attached.get(gnb, ())


class MobilityManager:
    def __init__(
        self,
        sim,
        engine,
        tiers: dict[str, TierHandle],
        full_views: Iterable[TierHandle],
        *,
        commit_timeout: float = DEFAULT_COMMIT_TIMEOUT,
    ):
        self.sim = sim
        self.engine = engine
        self.tiers = tiers
        self.full_views = list(full_views)
        self.commit_timeout = commit_timeout
        self.sessions: dict[tuple[BcAdd, str], HandshakeSession] = {}
        self.forwarding = ForwardingTable()
        self.events: list[HandoverEvent] = []
        self._ues: dict[BcAdd, _UeContext] = {}
        self._amf: dict[BcAdd, MobilityRecord] = {}
        self._applied_at: dict[BcAdd, float] = {}
        self._seen_heights: set[int] = set()
        engine.subscribe(self._on_commit)

    # -- bookkeeping ---------------------------------------------------------

    def add_session(self, gnb: str, session: HandshakeSession) -> None:
        if not session.verified:
            raise UnauthenticatedAttachError("handshake did not verify")
        ue = session.local.bcadd if session.initiator else session.peer_bcadd
        self.sessions[(ue, gnb)] = session

    def has_session(self, ue: BcAdd, gnb: str) -> bool:
        s = self.sessions.get((ue, gnb))
        return s is not None and s.verified

    def set_amf_bypass(self, bundle: IdentityBundle, enabled: bool = True) -> None:
        self._context(bundle).amf_bypass = enabled

    def _context(self, bundle: IdentityBundle) -> _UeContext:
        ctx = self._ues.get(bundle.bcadd)
        if ctx is None:
            last = max((v.snapshot().nonces.get(bundle.bcadd, 0) for v in self.full_views), default=0)
            ctx = self._ues[bundle.bcadd] = _UeContext(bundle, last, origin=f"ue-{bundle.bcadd.hex()[:16]}")
        return ctx

    def _committed(self, ue: BcAdd) -> MobilityRecord | None:
        best = None
        for v in self.full_views:
            rec = v.snapshot().mobility_registry.get(ue)
            if rec is not None and (best is None or rec.sequence > best.sequence):
                best = rec
        return best

    def _on_commit(self, replica_id, block, outcomes) -> None:
        if block.height in self._seen_heights:
            return
        self._seen_heights.add(block.height)
        # forwarding follows the first replica to commit each height
        for tx, outcome in zip(block.txs, outcomes):
            if tx.kind is TxKind.MOBILITY_UPDATE and outcome is None:
                gnb, _cell, _seq = decode_mobility_update(tx.body)
                old = self.forwarding.move(tx.sender, gnb)
                self._applied_at[tx.sender] = self.sim.now
                self.sim.record("mobility", "moved", f"{tx.sender.short()} {old}->{gnb}")

    # -- non-blocking API ----------------------------------------------------

    def request_attach(self, bundle, gnb, cell_id, on_done=None) -> HandoverEvent:
        return self._request(bundle, gnb, cell_id, on_done, require_attached=False)

    def request_handover(self, bundle, target_gnb, cell_id, on_done=None) -> HandoverEvent:
        return self._request(bundle, target_gnb, cell_id, on_done, require_attached=True)

    def _request(self, bundle, gnb, cell_id, on_done, *, require_attached) -> HandoverEvent:
        if not self.has_session(bundle.bcadd, gnb):
            raise UnauthenticatedAttachError(f"no verified session between UE and {gnb}")
        ctx = self._context(bundle)
        source = self.forwarding.serving.get(bundle.bcadd)
        if ctx.amf_bypass:
            return self._amf_move(ctx, gnb, cell_id, source, on_done)
        if require_attached and source is None and self._committed(bundle.bcadd) is None:
            raise NotFoundError("UE is not attached; attach before handing over")
        ev = HandoverEvent(bundle.bcadd, source, gnb, self.sim.now)
        req = _Request(ev, cell_id, self.tiers[gnb])
        if on_done is not None:
            req.callbacks.append(on_done)
        self.events.append(ev)
        req.timer = self.sim.schedule(self.commit_timeout, self._timeout, req)
        self._submit(ctx, req)
        return ev

    def _submit(self, ctx: _UeContext, req: _Request) -> None:
        ev = req.event
        prev = self._committed(ev.ue)
        ev.sequence = max(prev.sequence if prev else 0, ctx.last_sequence) + 1
        ev.attempts += 1
        ctx.nonce += 1
        body = mobility_update_body(ev.target_gnb, req.cell_id, ev.sequence)
        tx = make_transaction(ctx.bundle.keypair, TxKind.MOBILITY_UPDATE, body, ctx.nonce, self.sim.now)
        self.sim.record(ctx.origin, "mobility-update", f"to={ev.target_gnb} seq={ev.sequence}")
        ack = req.via.submit(tx, ctx.origin)
        ack.callbacks.append(lambda a: self._on_ack(ctx, req, a))

    def _on_ack(self, ctx, req: _Request, ack) -> None:
        ev = req.event
        if ev.done:
            return
        if ack.applied:
            ctx.last_sequence = max(ctx.last_sequence, ev.sequence)
            self._finish(req, HandoverOutcome.COMPLETED, None, ack.commit_time)
            return
        superseded = self._applied_at.get(ev.ue, -1.0) >= ev.request_time
        if ack.outcome in _RETRYABLE and ev.attempts < 2 and not superseded:
            self._submit(ctx, req)
            return
        reason = "superseded" if superseded else ack.outcome
        self._finish(req, HandoverOutcome.ABORTED, reason, ack.commit_time)

    def _timeout(self, req: _Request) -> None:
        if not req.event.done:
            self._finish(req, HandoverOutcome.ABORTED, "commit-timeout", None)

    def _finish(self, req: _Request, outcome, reason, commit_time) -> None:
        ev = req.event
        ev.outcome = outcome
        ev.reason = reason
        ev.commit_time = commit_time
        if req.timer is not None:
            req.timer.cancel()
        self.sim.record("mobility", f"handover-{outcome.value}", f"{ev.ue.short()} ->{ev.target_gnb} {reason or ''}".rstrip())
        for cb in req.callbacks:
            cb(ev)

    def _amf_move(self, ctx, gnb, cell_id, source, on_done) -> HandoverEvent:
        prev = self._amf.get(ctx.bundle.bcadd)
        seq = (prev.sequence if prev else 0) + 1
        self._amf[ctx.bundle.bcadd] = MobilityRecord(ctx.bundle.bcadd, gnb, cell_id, seq, self.sim.now)
        self.forwarding.move(ctx.bundle.bcadd, gnb)
        ev = HandoverEvent(ctx.bundle.bcadd, source, gnb, self.sim.now, self.sim.now,
                           HandoverOutcome.COMPLETED, "amf-bypass", seq, 0)
        self.events.append(ev)
        if on_done is not None:
            on_done(ev)
        return ev

    # -- blocking API --------------------------------------------------------

    def _block(self, ev: HandoverEvent) -> HandoverEvent:
        self.sim.run(stop=lambda: ev.done)
        if ev.reason == "commit-timeout":
            raise CommitTimeoutError(f"mobility update not committed within {self.commit_timeout}s")
        if ev.outcome is HandoverOutcome.ABORTED:
            exc = SequenceConflictError(f"handover aborted: {ev.reason}")
            exc.event = ev
            raise exc
        return ev

    def attach(self, bundle: IdentityBundle, gnb: str, cell_id: int) -> HandoverEvent:
        return self._block(self.request_attach(bundle, gnb, cell_id))

    def handover(self, bundle: IdentityBundle, target_gnb: str, cell_id: int) -> HandoverEvent:
        return self._block(self.request_handover(bundle, target_gnb, cell_id))

    def lookup(self, ue: BcAdd, via: TierHandle) -> MobilityRecord:
        ctx = self._ues.get(ue)
        if ctx is not None and ctx.amf_bypass and ue in self._amf:
            return self._amf[ue]
        rec, _height = via.read_registry(ue)
        return rec


def lookup(ue: BcAdd, via: TierHandle) -> MobilityRecord:
    rec, _height = via.read_registry(ue)
    return rec
