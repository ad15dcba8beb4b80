"""Scenario orchestration: build a world, drive it, collect metrics and artifacts.

A run goes through five phases on one simulated clock:

1. registration: every identity is registered on-chain;
2. entities: UEs authenticate, attach, walk across gNBs and exchange
   encrypted packets through the network controller;
3. load: stepped open-loop payload traffic from the load clients, which
   starts together with phase 2 so both share the ordering service;
4. drain: wait for outstanding transactions;
5. quiesce: let peer replicas catch up before the chain is dumped.

Fault events are timed from the start of phase 2.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from cryptography.exceptions import InvalidTag

from ..auth import HandshakeAgent, open_payload, seal_payload
from ..consensus import EngineKind, make_engine, safety_violations
from ..controller import DataPacket, NetController
from ..errors import BackpressureError, DestinationUnknownError, ScenarioError
from ..identity import IdentityBundle, RealId, generate_identity
from ..ledger import (
    PAYLOAD_SIZE,
    Role,
    TxKind,
    dump_chain,
    identity_register_body,
    make_transaction,
    verify_chain,
)
from ..mobility import HandoverOutcome, MobilityManager
from ..tiers import CacheHandle, FullHandle, LightHandle, Tier, TierHandle
from .config import ScenarioConfig
from .core import Simulator
from .network import SimNetwork

CSV_HEADER = "step,offered_tps,committed_tps,lat_p50_ms,lat_p95_ms,lat_p99_ms,engine,seed"
REGISTRATION_TIMEOUT = 30.0
QUIESCE = 0.5


# -- metrics -------------------------------------------------------------------

@dataclass
class StepMetrics:
    step: int
    concurrency: int
    start: float
    duration: float
    offered_tps: float
    committed_tps: float = 0.0
    latencies: list[float] = field(default_factory=list, repr=False)

    def percentile_ms(self, q: float) -> float:
        if not self.latencies:
            return float("nan")
        return float(np.percentile(np.asarray(self.latencies), q)) * 1e3

    @property
    def mean_ms(self) -> float:
        if not self.latencies:
            return float("nan")
        return float(np.mean(self.latencies)) * 1e3


@dataclass
class RunMetrics:
    engine: str
    seed: int
    steps: list[StepMetrics] = field(default_factory=list)
    cpu_units: dict[str, float] = field(default_factory=dict)
    submitted: int = 0
    rejected: int = 0
    committed: int = 0
    applied: int = 0
    skipped: int = 0
    in_flight_end: int = 0
    commit_latencies: list[float] = field(default_factory=list, repr=False)
    handover_latencies: list[float] = field(default_factory=list, repr=False)

    def csv_rows(self) -> list[list[str]]:
        rows = []
        for s in self.steps:
            rows.append([
                str(s.step),
                f"{s.offered_tps:.3f}",
                f"{s.committed_tps:.3f}",
                f"{s.percentile_ms(50):.3f}",
                f"{s.percentile_ms(95):.3f}",
                f"{s.percentile_ms(99):.3f}",
                self.engine,
                str(self.seed),
            ])
        return rows

    def to_csv(self) -> str:
        return _csv(CSV_HEADER, self.csv_rows())

    def summary(self) -> dict:
        return {
            "engine": self.engine,
            "seed": self.seed,
            "submitted": self.submitted,
            "rejected": self.rejected,
            "committed": self.committed,
            "applied": self.applied,
            "skipped": self.skipped,
            "in_flight_end": self.in_flight_end,
            "mean_commit_latency_ms": _mean_ms(self.commit_latencies),
            "mean_handover_latency_ms": _mean_ms(self.handover_latencies),
            "steps": [
                {
                    "step": s.step,
                    "concurrency": s.concurrency,
                    "offered_tps": s.offered_tps,
                    "committed_tps": s.committed_tps,
                    "samples": len(s.latencies),
                    "lat_mean_ms": s.mean_ms,
                    "lat_p50_ms": s.percentile_ms(50),
                    "lat_p95_ms": s.percentile_ms(95),
                    "lat_p99_ms": s.percentile_ms(99),
                }
                for s in self.steps
            ],
            "cpu_units": dict(sorted(self.cpu_units.items())),
        }


def _mean_ms(xs) -> float | None:
    return float(np.mean(xs)) * 1e3 if len(xs) else None


def _csv(header: str, rows) -> str:
    buf = io.StringIO()
    buf.write(header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


# -- entities ------------------------------------------------------------------

class Gnb:
    """A base station: a ledger tier, an authentication endpoint and a forwarder."""

    def __init__(self, world: "World", gnb_id: str, bundle: IdentityBundle, handle: TierHandle):
        self.world = world
        self.id = gnb_id
        self.bundle = bundle
        self.handle = handle
        self.agent = HandshakeAgent(world.sim, world.net, gnb_id, bundle, handle)
        self.stale_drops = 0
        world.net.register(gnb_id, self._on_packet, DataPacket)

    @property
    def tier(self) -> Tier:
        return self.handle.tier

    def _on_packet(self, src: str, pkt: DataPacket) -> None:
        w = self.world
        if src == w.controller.node_id:
            if w.mobility.forwarding.serves(self.id, pkt.dst_bcadd):
                w.net.send(self.id, w.address_of[pkt.dst_bcadd], pkt)
            else:
                self.stale_drops += 1
                w.sim.record(self.id, "stale-hop", f"seq={pkt.seq}")
        else:
            w.net.send(self.id, w.controller.node_id, pkt)


class Endpoint:
    """A UE or a legacy host that sends and receives end-to-end encrypted data."""

    def __init__(self, world: "World", addr: str, bundle: IdentityBundle, registry):
        self.world = world
        self.addr = addr
        self.bundle = bundle
        self.agent = HandshakeAgent(world.sim, world.net, addr, bundle, registry)
        self.received: list[tuple[str, DataPacket]] = []
        self.opened = 0
        self.rejected = 0
        world.net.register(addr, self._on_packet, DataPacket)

    def _on_packet(self, src: str, pkt: DataPacket) -> None:
        self.received.append((src, pkt))
        peer = self.world.address_of.get(pkt.src_bcadd)
        session = self.agent.sessions.get(peer)
        if session is None:
            return
        try:
            open_payload(session.session_key, pkt.src_bcadd, pkt.dst_bcadd, pkt.seq, pkt.ciphertext)
        except InvalidTag:
            self.rejected += 1
            return
        self.opened += 1


@dataclass
class SentPacket:
    packet: DataPacket
    plaintext: bytes = field(repr=False)
    time: float


# -- world ---------------------------------------------------------------------

class World:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        ent = config.entities
        self._roles: dict = {}
        self.sim = Simulator(config.seed)
        self.net = SimNetwork(self.sim, config.network_config())
        self.net.capture_enabled = config.network.capture
        self.engine = make_engine(self.sim, self.net, config.ordering_config())
        for i in range(config.consensus.peers):
            self.engine.add_peer(f"peer-{i}")
        anchor_id = self.engine.node_ids[0]
        self.anchor = FullHandle(anchor_id, self.engine.nodes[anchor_id].replica, self.engine)
        self.address_of: dict = {}
        self.real_ids: list[RealId] = []
        self.bundles: list[IdentityBundle] = []

        tiers = list(ent.gnb_tiers) or ["full"] * ent.gnbs
        fulls: list[FullHandle] = []
        handles: dict[str, TierHandle] = {}
        for i, t in enumerate(tiers):
            gid = f"gnb-{i}"
            if Tier(t) is Tier.FULL:
                peer = self.engine.add_peer(gid)
                handles[gid] = FullHandle(gid, peer.replica, self.engine)
                fulls.append(handles[gid])
        source = fulls[0] if fulls else self.anchor
        refresh = ent.refresh_interval_ms / 1e3
        for i, t in enumerate(tiers):
            gid = f"gnb-{i}"
            if Tier(t) is Tier.LIGHT:
                handles[gid] = LightHandle(gid, source, self.sim)
            elif Tier(t) is Tier.CACHE_ONLY:
                handles[gid] = CacheHandle(
                    gid, source, self.sim, refresh_interval=refresh,
                    relay=source if ent.cache_relay else None,
                )
        self.full_handles = fulls or [self.anchor]

        self.gnbs: dict[str, Gnb] = {}
        for i in range(len(tiers)):
            gid = f"gnb-{i}"
            self.gnbs[gid] = Gnb(self, gid, self._identity(f"gnb/{i}", Role.GNB), handles[gid])
            self.address_of[self.gnbs[gid].bundle.bcadd] = gid

        self.ues: list[Endpoint] = []
        for i in range(ent.ues):
            real = RealId(self.sim.rng(f"realid/{i}").randbytes(16))
            self.real_ids.append(real)
            bundle = self._identity(f"ue/{i}", Role.UE, real)
            self.ues.append(Endpoint(self, f"ue-{i}", bundle, self.anchor))
            self.address_of[bundle.bcadd] = f"ue-{i}"
        self.hosts: list[Endpoint] = []
        for i in range(ent.legacy_hosts):
            bundle = self._identity(f"host/{i}", Role.HOST)
            self.hosts.append(Endpoint(self, f"host-{i}", bundle, self.anchor))
            self.address_of[bundle.bcadd] = f"host-{i}"
        self.clients = [self._identity(f"client/{i}", Role.SERVER) for i in range(config.load.clients)]
        self._client_nonce = [1] * len(self.clients)

        ctrl_tier = Tier(ent.controller_tier)
        if ctrl_tier is Tier.FULL:
            ctrl_view = source
        elif ctrl_tier is Tier.LIGHT:
            ctrl_view = LightHandle("controller", source, self.sim)
        else:
            ctrl_view = CacheHandle("controller", source, self.sim, refresh_interval=refresh)
        self.controller = NetController(
            self.sim, pool=ent.pool, lease=ent.lease_s, net=self.net, view=ctrl_view
        )
        self.net.register(self.controller.node_id, self._controller_rx, DataPacket)
        self.mobility = MobilityManager(
            self.sim, self.engine, {g.id: g.handle for g in self.gnbs.values()}, self.full_handles
        )
        self.sent_packets: list[SentPacket] = []
        self.load_acks: list[tuple[int, object]] = []
        self.other_acks: list = []
        self.cache_convergence: dict[str, float] = {}
        self.walk_final_commit: float | None = None
        self.engine.start()

    # -- helpers -------------------------------------------------------------

    def _identity(self, label: str, role: Role, real_id: RealId | None = None) -> IdentityBundle:
        bundle = generate_identity(f"{self.config.seed}/{label}".encode(), real_id, now=self.sim.now)
        self.bundles.append(bundle)
        self._roles[bundle.bcadd] = role
        return bundle

    def _controller_rx(self, src: str, pkt: DataPacket) -> None:
        try:
            self.controller.forward(pkt)
        except DestinationUnknownError:
            self.sim.record(self.controller.node_id, "drop", f"no-route seq={pkt.seq}")

    def wait_for(self, pred, timeout: float) -> bool:
        return self.sim.run(until=self.sim.now + timeout, stop=pred)

    def inject(self, node: str, kind: str) -> None:
        self.engine.inject_fault(node, kind)

    # -- phase 1 -------------------------------------------------------------

    def register_all(self) -> None:
        acks = []
        for bundle in self.bundles:
            body = identity_register_body(bundle.public_key, self._roles[bundle.bcadd])
            tx = make_transaction(bundle.keypair, TxKind.IDENTITY_REGISTER, body, 1, self.sim.now)
            acks.append(self.engine.submit(tx, "registrar"))
        ok = self.wait_for(lambda: all(a.done for a in acks), REGISTRATION_TIMEOUT)
        self.other_acks.extend(acks)
        if not ok:
            raise ScenarioError("identity registration did not commit")
        # every ledger view must know every identity before anyone authenticates
        views = [self.anchor, *self.full_handles, self.controller.view]
        views += [g.handle for g in self.gnbs.values()]
        self.wait_for(
            lambda: all(v.is_registered(b.bcadd) for v in views for b in self.bundles),
            REGISTRATION_TIMEOUT,
        )

    # -- phase 2 -------------------------------------------------------------

    def handshake(self, ue: Endpoint, gnb: Gnb, timeout: float = 1.0) -> bool:
        if self.mobility.has_session(ue.bundle.bcadd, gnb.id):
            return True
        done = []
        ue.agent.connect(gnb.id, gnb.bundle.bcadd, done.append)
        self.wait_for(lambda: bool(done), timeout)
        if done and done[0].verified:
            self.mobility.add_session(gnb.id, done[0])
            return True
        return False

    def _wait_refresh(self) -> None:
        """Run until every tier handle serves the committed mobility records."""
        truth = self.full_handles[0]
        # convergence counts from the last committed move, not from when we start looking
        start = self.walk_final_commit if self.walk_final_commit is not None else self.sim.now
        bound = self.config.entities.refresh_interval_ms / 1e3 + self.engine.config.block_interval
        handles = {g.id: g.handle for g in self.gnbs.values()}
        handles[self.controller.node_id] = self.controller.view

        def fresh(h) -> bool:
            want = truth.snapshot().mobility_registry
            have = h.snapshot().mobility_registry
            return all(have.get(ue.bundle.bcadd) == want.get(ue.bundle.bcadd) for ue in self.ues)

        def probe() -> bool:
            for hid, h in handles.items():
                if hid not in self.cache_convergence and fresh(h):
                    self.cache_convergence[hid] = self.sim.now - start
            return len(self.cache_convergence) == len(handles)

        while not probe() and self.sim.now - start <= 2 * bound:
            self.sim.run_for(0.001)

    def run_entities(self) -> None:
        ent = self.config.entities
        gnbs = list(self.gnbs.values())
        if not gnbs or not self.ues:
            return
        for i, ue in enumerate(self.ues):
            self.handshake(ue, gnbs[i % len(gnbs)])
        pending = [
            self.mobility.request_attach(ue.bundle, gnbs[i % len(gnbs)].id, i)
            for i, ue in enumerate(self.ues)
            if self.mobility.has_session(ue.bundle.bcadd, gnbs[i % len(gnbs)].id)
        ]
        self.wait_for(lambda: all(e.done for e in pending), self.mobility.commit_timeout + 1)

        rng = self.sim.rng("walk")
        dwell = 2 * self.engine.config.block_interval
        for _step in range(ent.handover_steps):
            batch = []
            n = 0
            for ue in self.ues:
                current = self.mobility.forwarding.serving.get(ue.bundle.bcadd)
                target = rng.choice([g for g in gnbs if g.id != current])
                if not self.handshake(ue, target):
                    continue
                # each UE dwells a random time in its cell before moving on
                self.sim.schedule(
                    rng.uniform(0, dwell), self._move, batch, ue, target, rng.randrange(1 << 16)
                )
                n += 1
            self.wait_for(lambda: len(batch) == n and all(e.done for e in batch),
                          dwell + self.mobility.commit_timeout)
        done = [e for e in self.mobility.events if e.outcome is HandoverOutcome.COMPLETED]
        if done:
            self.walk_final_commit = max(e.commit_time for e in done)
        self._wait_refresh()
        if ent.packets:
            self.exchange_packets(ent.packets)

    def _move(self, batch: list, ue: Endpoint, target: Gnb, cell: int) -> None:
        batch.append(self.mobility.request_handover(ue.bundle, target.id, cell))

    def exchange_packets(self, count: int) -> None:
        pairs = [(self.ues[i], self.ues[(i + 1) % len(self.ues)]) for i in range(len(self.ues))
                 if len(self.ues) >= 2]
        for host in self.hosts:
            self.controller.bind(host.bundle.bcadd, self.full_handles[0])
            if self.ues:
                pairs.append((self.ues[0], host))
        for a, b in pairs:
            got = []
            a.agent.connect(b.addr, b.bundle.bcadd, got.append)

            def both_ends(a=a, b=b, got=got) -> bool:
                peer = b.agent.sessions.get(a.addr)
                return bool(got) and (not got[0].verified or (
                    peer is not None and peer.session_key == got[0].session_key))

            self.wait_for(both_ends, 1.0)
        rng = self.sim.rng("payload")
        seqs: dict = {}
        for k in range(count):
            a, b = pairs[k % len(pairs)]
            # the latest verified handshake between two agents is the key both ends hold
            s = a.agent.sessions.get(b.addr)
            if s is None:
                continue
            seq = seqs[(a.addr, b.addr)] = seqs.get((a.addr, b.addr), 0) + 1
            plain = rng.randbytes(64)
            ct = seal_payload(s.session_key, a.bundle.bcadd, b.bundle.bcadd, seq, plain)
            pkt = DataPacket(a.bundle.bcadd, b.bundle.bcadd, ct, seq)
            self.sent_packets.append(SentPacket(pkt, plain, self.sim.now))
            serving = self.mobility.forwarding.serving.get(a.bundle.bcadd)
            first_hop = serving if serving is not None else self.controller.node_id
            self.net.send(a.addr, first_hop, pkt)
            self.sim.run_for(0.001)
        self.sim.run_for(0.05)

    # -- phase 3 -------------------------------------------------------------

    def _emit(self, step: int, client: int) -> None:
        bundle = self.clients[client]
        self._client_nonce[client] += 1
        body = self._payload_rng.randbytes(PAYLOAD_SIZE)
        tx = make_transaction(bundle.keypair, TxKind.PAYLOAD, body, self._client_nonce[client], self.sim.now)
        try:
            ack = self.engine.submit(tx, f"client-{client}")
        except BackpressureError:
            return
        self.load_acks.append((step, ack))

    def schedule_load(self) -> None:
        """Queue every load transaction; they are emitted as the clock advances."""
        load = self.config.load
        self._payload_rng = self.sim.rng("load")
        self.steps: list[StepMetrics] = []
        t0 = self.sim.now
        k = 0
        for i, c in enumerate(load.steps):
            rate = c * load.rate_per_request
            start = t0 + i * load.step_duration_s
            n = int(round(rate * load.step_duration_s))
            for j in range(n):
                self.sim.at(start + j / rate, self._emit, i, k % len(self.clients))
                k += 1
            self.steps.append(StepMetrics(i + 1, c, start, load.step_duration_s, rate))
        self.load_end = t0 + len(load.steps) * load.step_duration_s

    def finish_load(self) -> list[StepMetrics]:
        load = self.config.load
        if self.sim.now < self.load_end:
            self.sim.run(until=self.load_end)
        self.wait_for(lambda: self.engine.in_flight == 0, load.drain_s)
        steps = self.steps
        for step, ack in self.load_acks:
            if ack.done:
                steps[step].latencies.append(ack.latency)
        commit_times = np.sort(np.array([a.commit_time for _, a in self.load_acks if a.done]))
        for s in steps:
            lo, hi = np.searchsorted(commit_times, [s.start, s.start + s.duration])
            s.committed_tps = (hi - lo) / s.duration
        return steps


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    metrics: RunMetrics
    world: World = field(repr=False)

    @property
    def chain(self):
        return self.world.engine.reference_chain()

    def chain_dump(self) -> bytes:
        return dump_chain(self.chain)

    def trace_text(self) -> str:
        return "".join(line + "\n" for line in self.world.sim.trace)

    def chain_verifies(self) -> bool:
        return verify_chain(self.chain, self.world.engine.config.max_block_txs)

    def replicas_identical(self) -> bool:
        reps = self.world.engine.honest_replicas().values()
        heads = {(r.height, r.head.block_hash) for r in reps}
        return len(heads) == 1 and not safety_violations(r.chain for r in reps)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "metrics": out / "metrics.csv",
            "chain": out / "chain.bin",
            "trace": out / "trace.log",
            "summary": out / "summary.json",
        }
        paths["metrics"].write_text(self.metrics.to_csv())
        paths["chain"].write_bytes(self.chain_dump())
        paths["trace"].write_text(self.trace_text())
        summary = self.metrics.summary()
        summary["name"] = self.config.name
        summary["chain_height"] = self.chain[-1].height
        summary["chain_verifies"] = self.chain_verifies()
        summary["replicas_identical"] = self.replicas_identical()
        paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if self.world.controller.egress:
            paths["egress"] = out / "egress.bin"
            self.world.controller.write_egress(paths["egress"])
        return paths


def run_scenario(config: ScenarioConfig, out_dir: str | Path | None = None) -> ScenarioResult:
    world = World(config)
    world.register_all()
    origin = world.sim.now
    for ev in config.faults:
        world.sim.at(origin + ev.at_s, world.inject, ev.node, ev.kind)
    world.schedule_load()
    world.run_entities()
    steps = world.finish_load()
    world.sim.run_for(QUIESCE)

    eng = world.engine
    acks = [a for _, a in world.load_acks] + world.other_acks
    metrics = RunMetrics(
        engine=config.engine.value,
        seed=config.seed,
        steps=steps,
        cpu_units={nid: n.cpu.units for nid, n in eng.nodes.items()},
        submitted=eng.submitted + eng.rejected,
        rejected=eng.rejected,
        committed=eng.applied + eng.skipped,
        applied=eng.applied,
        skipped=eng.skipped,
        in_flight_end=eng.in_flight,
        commit_latencies=[a.latency for a in acks if a.done],
        handover_latencies=[
            e.latency for e in world.mobility.events
            if e.outcome is HandoverOutcome.COMPLETED and e.latency is not None
        ],
    )
    result = ScenarioResult(config, metrics, world)
    if out_dir is not None:
        result.write(out_dir)
    return result


# -- sweeps --------------------------------------------------------------------

def _sweep_one(args) -> str:
    config, out_dir = args
    result = run_scenario(config, out_dir)
    return result.metrics.to_csv()


def sweep(
    config: ScenarioConfig,
    engines=None,
    profiles=None,
    *,
    out_dir: str | Path | None = None,
    workers: int = 1,
) -> str:
    """Run every (engine, step profile) pair and return one merged CSV."""
    engines = [EngineKind(e).value for e in (engines or [k.value for k in EngineKind])]
    profiles = profiles or [config.load.steps]
    jobs = []
    for e in engines:
        for p, steps in enumerate(profiles):
            cfg = config.with_overrides(engine=e, steps=steps)
            sub = None if out_dir is None else Path(out_dir) / f"{e}-{p}"
            jobs.append((cfg, sub))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_sweep_one, jobs))
    else:
        parts = [_sweep_one(j) for j in jobs]
    rows = [line for part in parts for line in part.splitlines()[1:]]
    merged = CSV_HEADER + "\n" + "".join(r + "\n" for r in rows)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sweep.csv").write_text(merged)
    return merged
