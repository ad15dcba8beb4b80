import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from conftest import cluster, payload_tx
from decentran.consensus import Fault, QuorumCertificate, safety_violations, verify_qc
from decentran.consensus.hotstuff import genesis_qc, vote_message
from decentran.consensus.messages import Phase
from decentran.errors import BackpressureError, UnknownNodeError
from decentran.ledger import verify_chain
from decentran.sim.faults import fault_trial, random_faults


def _commit_one(sim, eng, timeout=5.0):
    ack = eng.submit(payload_tx(sim.now))
    assert eng.wait(ack, timeout)
    return ack


def _chains(eng):
    return [r.chain for r in eng.honest_replicas().values()]


def test_solo_commits_single_tx_after_timeout():
    sim, _, eng = cluster("solo", block_timeout=0.05)
    ack = _commit_one(sim, eng)
    blk = eng.reference_chain()[ack.height]
    assert len(blk.txs) == 1
    assert 0.05 <= ack.latency < 0.05 + 0.01


def test_solo_packs_full_block_immediately():
    sim, _, eng = cluster("solo", block_timeout=10.0, max_block_txs=5)
    acks = [eng.submit(payload_tx(sim.now)) for _ in range(5)]
    sim.run_for(0.01)
    assert all(a.done for a in acks)
    assert len(eng.reference_chain()[-1].txs) == 5


def test_backpressure():
    sim, _, eng = cluster("solo", mempool_capacity=3)
    for _ in range(3):
        eng.submit(payload_tx(sim.now))
    with pytest.raises(BackpressureError):
        eng.submit(payload_tx(sim.now))
    assert eng.rejected == 1


def test_unknown_node_fault():
    _, _, eng = cluster("raft", n=3)
    with pytest.raises(UnknownNodeError):
        eng.inject_fault("consensus-9", Fault.CRASH)


@pytest.mark.parametrize("engine", ["solo", "raft", "hotstuff"])
def test_same_seed_same_chain(engine):
    def run():
        sim, _, eng = cluster(engine, seed=4)
        for i in range(30):
            sim.at(0.5 + i * 0.01, lambda i=i: eng.submit(payload_tx(sim.now, nonce=i + 1)))
        sim.run(until=3.0)
        return [b.encode() for b in eng.reference_chain()]
    assert run() == run()


def test_raft_leader_crash_recommits_within_bound():
    sim, _, eng = cluster("raft", n=3, seed=2)
    sim.run(until=1.0)
    leader = eng.leader()
    assert leader is not None
    eng.inject_fault(leader, Fault.CRASH)
    t0 = sim.now
    ack = eng.submit(payload_tx(sim.now))
    hi = eng.config.election_timeout_range[1]
    assert eng.wait(ack, 10 * hi)
    assert ack.commit_time - t0 <= 10 * hi
    assert eng.leader() not in (None, leader)
    assert not safety_violations(_chains(eng))


def test_raft_two_of_three_crashed_stalls_safely():
    sim, _, eng = cluster("raft", n=3, seed=3)
    sim.run(until=1.0)
    _commit_one(sim, eng)
    eng.inject_fault("consensus-0", Fault.CRASH)
    eng.inject_fault("consensus-1", Fault.CRASH)
    height = max(len(c) for c in _chains(eng))
    ack = eng.submit(payload_tx(sim.now))
    assert not eng.wait(ack, 2.0)
    assert max(len(c) for c in _chains(eng)) == height
    eng.inject_fault("consensus-1", Fault.RECOVER)
    assert eng.wait(ack, 5.0)
    assert not safety_violations(_chains(eng))


def test_raft_partitioned_leader_stays_safe():
    sim, _, eng = cluster("raft", n=4, seed=5)
    sim.run(until=1.0)
    old = eng.leader()
    eng.inject_fault(old, Fault.PARTITION)
    acks = [eng.submit(payload_tx(sim.now)) for _ in range(10)]
    sim.run_for(2.0)
    assert all(a.done for a in acks)
    eng.inject_fault(old, Fault.HEAL)
    sim.run_for(2.0)
    assert not safety_violations(_chains(eng))
    chains = _chains(eng)
    assert len({len(c) for c in chains}) == 1
    assert all(verify_chain(c) for c in chains)


def test_hotstuff_idle_latency_is_rotation_gated():
    sim, _, eng = cluster("hotstuff", n=4, rotation_interval=0.1, block_timeout=0.05)
    sim.run(until=1.0 + 1e-4)  # just after a view boundary
    ack = _commit_one(sim, eng)
    assert ack.latency >= 0.1


def test_hotstuff_byzantine_leader_no_conflicts():
    for seed in range(5):
        sim, _, eng = cluster("hotstuff", n=4, seed=seed, peers=1)
        eng.inject_fault("consensus-1", Fault.BYZANTINE_EQUIVOCATE)
        for i in range(60):
            sim.at(0.05 + i * 0.02, lambda: eng.submit(payload_tx(sim.now)))
        sim.run(until=3.0)
        assert not safety_violations(_chains(eng))
        assert sum(",equivocate," in line for line in sim.trace) > 0
        assert max(len(c) for c in _chains(eng)) > 5


def test_equivocation_only_for_hotstuff():
    _, _, eng = cluster("raft", n=4)
    with pytest.raises(ValueError):
        eng.inject_fault("consensus-0", Fault.BYZANTINE_EQUIVOCATE)


def test_peer_replicas_follow_and_verify():
    sim, _, eng = cluster("hotstuff", n=4, peers=2)
    for _ in range(5):
        _commit_one(sim, eng)
    sim.run_for(0.5)
    peer_chain = eng.peers["peer-0"].replica.chain
    assert verify_chain(peer_chain)
    assert peer_chain == eng.honest_replicas()["peer-1"].chain


# -- quorum certificates -------------------------------------------------------

def _signed_qc(eng, block_hash, view, phase, signers):
    msg = vote_message(block_hash, view, phase)
    sigs = tuple(eng.nodes[s].keypair.sign(msg) for s in signers)
    return QuorumCertificate(block_hash, view, phase, tuple(signers), sigs)


@pytest.fixture
def hs():
    return cluster("hotstuff", n=4)[2]


def test_qc_valid_with_quorum(hs):
    h = b"\x07" * 32
    qc = _signed_qc(hs, h, 5, Phase.PREPARE, ["consensus-0", "consensus-1", "consensus-2"])
    assert verify_qc(qc, hs.validators, 3, hs.genesis.block_hash)
    assert len(qc.aggregate_signature) == 3 * 64


def test_qc_rejections(hs):
    h, g = b"\x07" * 32, hs.genesis.block_hash
    ids = ["consensus-0", "consensus-1", "consensus-2"]
    good = _signed_qc(hs, h, 5, Phase.PREPARE, ids)
    below = _signed_qc(hs, h, 5, Phase.PREPARE, ids[:2])
    dup = QuorumCertificate(h, 5, Phase.PREPARE, (ids[0], ids[0], ids[1]), (good.signatures[0],) * 2 + (good.signatures[1],))
    wrong_phase = QuorumCertificate(h, 5, Phase.COMMIT, good.signer_set, good.signatures)
    wrong_view = QuorumCertificate(h, 6, Phase.PREPARE, good.signer_set, good.signatures)
    outsider = QuorumCertificate(h, 5, Phase.PREPARE, ids[:2] + ["mallory"], good.signatures)
    short = QuorumCertificate(h, 5, Phase.PREPARE, good.signer_set, good.signatures[:2])
    for qc in (below, dup, wrong_phase, wrong_view, outsider, short):
        assert not verify_qc(qc, hs.validators, 3, g)


def test_genesis_qc_rules(hs):
    g = hs.genesis
    assert verify_qc(genesis_qc(g), hs.validators, 3, g.block_hash)
    assert not verify_qc(QuorumCertificate(b"\x01" * 32, 0, Phase.PREPARE), hs.validators, 3, g.block_hash)
    assert not verify_qc(QuorumCertificate(g.block_hash, 0, Phase.COMMIT), hs.validators, 3, g.block_hash)


def test_safety_oracle_detects_fork():
    from chaingen import random_chain
    a = random_chain(1, 5)
    b = random_chain(2, 5)
    assert safety_violations([a, a]) == []
    assert safety_violations([a, b]) == [1, 2, 3, 4, 5]


# -- properties over random tolerable fault schedules --------------------------






@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.sampled_from(["raft", "hotstuff"]), st.integers(0, 2**32 - 1))
def test_safety_under_random_faults(engine, seed):
    trial = fault_trial(engine, seed)
    assert trial.safe, trial
    assert trial.height > 0


@given(st.sampled_from(["solo", "raft", "hotstuff"]), st.integers(1, 10), st.randoms(use_true_random=False))
def test_fault_schedules_stay_within_tolerance(engine, n, rng):
    n = 1 if engine == "solo" else n
    events = random_faults(engine, n, rng)
    kinds = {"raft": {"crash", "recover", "partition", "heal"},
             "hotstuff": {"byzantine-equivocate"},
             "solo": {"crash", "recover"}}[engine]
    assert {e.kind for e in events} <= kinds
    faulty = {e.node for e in events}
    if engine == "raft":
        assert len(faulty) <= (n - 1) // 2
    elif engine == "hotstuff":
        assert len(faulty) <= (n - 1) // 3
    assert [e.at_s for e in events] == sorted(e.at_s for e in events)
