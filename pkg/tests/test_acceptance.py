"""End-to-end acceptance checks; each prints one PASS/FAIL line at its tolerance."""

import random
import time
from dataclasses import replace
from pathlib import Path

import pytest

from conftest import ACCEPTANCE_LINES
from decentran.demos import honest_trials, mitm_trials
from decentran.identity import expanded_private_keys
from decentran.ledger import dump_chain, verify_chain, verify_dump
from decentran.sim.config import load_config
from decentran.sim.faults import fault_campaign
from decentran.sim.harness import run_scenario
from decentran.tiers import Tier
from oracles import ledger_ref, stats_ref

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
ENGINES = ("solo", "raft", "hotstuff")
CHAINS_CHECKED: list = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def _remember(result):
    CHAINS_CHECKED.append((result.chain, result.world.engine.config.max_block_txs))
    return result


@pytest.fixture(scope="module")
def throughput_runs():
    cfg = load_config(SCENARIOS / "throughput.toml")
    runs = {}
    for e in ENGINES:
        t0 = time.perf_counter()
        runs[e] = (_remember(run_scenario(cfg.with_overrides(engine=e))), time.perf_counter() - t0)
    return cfg, runs


@pytest.fixture(scope="module")
def mixed_run():
    return _remember(run_scenario(load_config(SCENARIOS / "mixed.toml")))


def test_1_throughput_plateaus_at_budget_ceiling(throughput_runs):
    cfg, runs = throughput_runs
    c = cfg.consensus
    ceiling = stats_ref.budget_ceiling(c.budget, c.tx_cost)
    ok, parts = True, []
    for e, (result, wall) in runs.items():
        steps = result.metrics.steps
        rising = [s.committed_tps for s in steps if s.offered_tps < ceiling]
        plateau = [s.committed_tps for s in steps if s.offered_tps >= ceiling]
        mono = all(b >= a * 0.95 for a, b in zip(rising, rising[1:] + plateau[:1]))
        flat = bool(plateau) and all(abs(x - ceiling) <= 0.10 * ceiling for x in plateau)
        ok &= mono and flat and wall < 120
        parts.append(f"{e}: plateau={[round(x) for x in plateau]} mono={mono} {wall:.1f}s")
    report(1, ok, f"ceiling={ceiling:.0f} tps +/-10%; " + "; ".join(parts))


def test_2_latency_band_and_overload(throughput_runs):
    cfg, runs = throughput_runs
    c = cfg.consensus
    ceiling = stats_ref.budget_ceiling(c.budget, c.tx_cost)
    band_ms = stats_ref.latency_band(c.block_timeout_ms / 1e3, cfg.network.link_latency_ms / 1e3) * 1e3
    ok, parts = True, []
    for e in ("solo", "raft"):
        steps = runs[e][0].metrics.steps
        light = [s for s in steps if s.offered_tps <= 0.8 * ceiling]
        over = [s for s in steps if s.offered_tps >= 1.5 * ceiling]
        in_band = all(s.mean_ms <= band_ms and len(s.latencies) >= 500 for s in light)
        blown = bool(over) and all(s.mean_ms > 3 * band_ms and len(s.latencies) >= 500 for s in over)
        ok &= in_band and blown
        parts.append(f"{e}: light max {max(s.mean_ms for s in light):.1f} ms, "
                     f"150% {min(s.mean_ms for s in over):.0f} ms")
    hs, rf = runs["hotstuff"][0].metrics.steps[0], runs["raft"][0].metrics.steps[0]
    assert c.rotation_interval_ms > c.block_timeout_ms
    slow = hs.mean_ms > rf.mean_ms and min(len(hs.latencies), len(rf.latencies)) >= 500
    ok &= slow
    parts.append(f"step1 hotstuff {hs.mean_ms:.1f} ms > raft {rf.mean_ms:.1f} ms")
    report(2, ok, f"band={band_ms:.1f} ms; " + "; ".join(parts))


@pytest.fixture(scope="module")
def campaigns():
    out, t0 = {}, time.perf_counter()
    for e in ENGINES:
        out[e] = fault_campaign(e, 1000)
    return out, time.perf_counter() - t0


def test_3_safety_under_tolerated_faults(campaigns):
    runs, wall = campaigns
    bad = {e: sum(not t.safe for t in trials) for e, trials in runs.items()}
    faulted = {e: sum(bool(t.faults) for t in trials) for e, trials in runs.items()}
    equivocating = sum(t.equivocations > 0 for t in runs["hotstuff"])
    ok = all(len(t) == 1000 for t in runs.values()) and not any(bad.values()) and wall < 600
    ok &= all(f == 1000 for f in faulted.values()) and equivocating == 1000
    report(3, ok, f"violations={bad} faulted={faulted} hotstuff equivocating runs={equivocating} "
                  f"wall={wall:.0f}s (< 600s)")


def test_4_chain_integrity(campaigns, throughput_runs, mixed_run):
    runs, _ = campaigns
    valid = sum(t.chain_valid for trials in runs.values() for t in trials)
    total = sum(len(t) for t in runs.values())
    valid += sum(verify_chain(ch, m) for ch, m in CHAINS_CHECKED)
    total += len(CHAINS_CHECKED)
    dump = mixed_run.chain_dump()
    rng = random.Random(4)
    bits = rng.sample(range(len(dump) * 8), 500)
    missed = 0
    for bit in bits:
        flipped = bytearray(dump)
        flipped[bit // 8] ^= 1 << (bit % 8)
        missed += verify_dump(bytes(flipped))
    report(4, valid == total and missed == 0,
           f"{valid}/{total} chains verify; {len(bits) - missed}/{len(bits)} single-bit flips detected")


def test_5_pkaai_authentication():
    honest = honest_trials(1000, seed=5)
    mitm = mitm_trials(1000, seed=5)
    ok = honest.all_ok and honest.trials == 1000 and mitm.adversary_verified == 0 and len(mitm.trials) == 1000
    report(5, ok, f"honest {honest.verified_both}/1000 verified, {honest.keys_equal}/1000 equal keys; "
                  f"MitM {mitm.adversary_verified}/1000 adversary sessions")


def test_6_privacy_scan(mixed_run):
    w = mixed_run.world
    assert w.config.network.capture and w.net.captured
    assert w.sent_packets and any(e.source_gnb for e in w.mobility.events)
    secrets = [r.value for r in w.real_ids]
    for ue in w.ues:
        secrets.append(ue.bundle.keypair.private_key)
        secrets.extend(expanded_private_keys(ue.bundle.keypair.private_key))
    blobs = {"traffic": w.net.captured_bytes()}
    for nid, rep in w.engine.honest_replicas().items():
        blobs[f"chain:{nid}"] = dump_chain(rep.chain)
    for g in w.gnbs.values():
        if g.tier is Tier.FULL:
            blobs[f"persisted:{g.id}"] = g.handle.replica.persisted_bytes()
    hits = [(name, i) for name, blob in blobs.items() for i, s in enumerate(secrets) if s in blob]
    total = sum(len(b) for b in blobs.values())
    report(6, not hits, f"{len(secrets)} patterns over {len(blobs)} blobs ({total} bytes): {len(hits)} hits")


def test_7_mobility_convergence(mixed_run):
    w = mixed_run.world
    ent = w.config.entities
    assert ent.handover_steps == 10 and len(w.gnbs) == 4
    _, mob, _, _ = ledger_ref.fold(w.engine.reference_chain())
    expected = {ue.bundle.bcadd.value: mob.get(ue.bundle.bcadd.value)[:3] for ue in w.ues}
    views = {nid: rep.state.mobility_registry for nid, rep in w.engine.honest_replicas().items()}
    mismatched = [
        nid for nid, reg in views.items()
        if {k.value: (r.serving_gnb, r.cell_id, r.sequence) for k, r in reg.items()} != expected
    ]
    bound = ent.refresh_interval_ms / 1e3 + w.engine.config.block_interval
    caches = {gid: w.cache_convergence.get(gid) for gid, g in w.gnbs.items() if g.tier is Tier.CACHE_ONLY}
    converged = bool(caches) and all(t is not None and t <= bound for t in caches.values())
    moves = sum(e.source_gnb is not None for e in w.mobility.events)
    report(7, not mismatched and converged,
           f"{len(views)} full replicas, {len(mismatched)} disagree with replay; {moves} handovers; "
           f"cache convergence {caches} <= {bound:.3f}s")


def test_8_e2ee_opacity(mixed_run):
    w = mixed_run.world
    sent = {(p.packet.src_bcadd, p.packet.dst_bcadd, p.packet.seq): p.packet.ciphertext for p in w.sent_packets}
    delivered = [pkt for ep in w.ues + w.hosts for _, pkt in ep.received]
    same = sum(sent.get((p.src_bcadd, p.dst_bcadd, p.seq)) == p.ciphertext for p in delivered)
    by_seq = {}
    for p in w.sent_packets:
        for h in w.hosts:
            if p.packet.dst_bcadd == h.bundle.bcadd:
                by_seq[p.packet.seq] = p.packet.ciphertext
    legacy_same = sum(by_seq.get(f.seq) == f.payload for f in w.controller.egress)
    n = len(delivered) + len(w.controller.egress)
    ok = n > 0 and same == len(delivered) and legacy_same == len(w.controller.egress)
    ok &= w.controller.decryptions == 0 and all(ep.rejected == 0 for ep in w.ues + w.hosts)
    report(8, ok, f"{same + legacy_same}/{n} delivered ciphertexts identical to sent "
                  f"({len(w.controller.egress)} via legacy egress); controller decryptions={w.controller.decryptions}")


def test_9_determinism():
    cfg = load_config(SCENARIOS / "mixed.toml")
    checks = []
    for c in (cfg, cfg.with_overrides(engine="hotstuff"), replace(cfg, seed=11)):
        a, b = run_scenario(c), run_scenario(c)
        checks.append(a.metrics.to_csv() == b.metrics.to_csv() and a.chain_dump() == b.chain_dump())
    report(9, all(checks), f"{sum(checks)}/{len(checks)} config pairs byte-identical (metrics CSV + chain dump)")
