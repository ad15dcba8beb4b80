import ipaddress

import pytest
from hypothesis import given, settings, strategies as st

from conftest import small_world
from decentran.controller import DataPacket, NetController, read_egress_trace
from decentran.demos import StaticRegistry
from decentran.errors import (
    AddressPoolExhaustedError,
    DestinationUnknownError,
    NotFoundError,
    UnregisteredIdentityError,
)
from decentran.identity import generate_identity
from decentran.ledger import LedgerState, MobilityRecord
from decentran.sim.core import Simulator

IDS = [generate_identity(f"ctl/{i}".encode()) for i in range(8)]
REG = StaticRegistry(b.bcadd for b in IDS)


def _ctl(pool="10.60.0.0/24", lease=10_000.0):
    return NetController(Simulator(0), pool=pool, lease=lease)


def test_first_bind_lowest_address_and_renewal():
    c = _ctl()
    b = c.bind(IDS[0].bcadd, REG)
    assert b.legacy_addr == "10.60.0.1"
    assert c.bind(IDS[1].bcadd, REG).legacy_addr == "10.60.0.2"
    assert c.bind(IDS[0].bcadd, REG).legacy_addr == "10.60.0.1"


def test_gateway_skipped():
    c = NetController(Simulator(0), pool="10.0.0.0/29", gateway="10.0.0.1")
    assert c.bind(IDS[0].bcadd, REG).legacy_addr == "10.0.0.2"


def test_unregistered_bind():
    with pytest.raises(UnregisteredIdentityError):
        _ctl().bind(generate_identity(b"nobody").bcadd, REG)


def test_pool_exhaustion_and_release():
    c = _ctl(pool="10.0.0.0/30")  # two usable hosts
    c.bind(IDS[0].bcadd, REG)
    c.bind(IDS[1].bcadd, REG)
    with pytest.raises(AddressPoolExhaustedError):
        c.bind(IDS[2].bcadd, REG)
    c.unbind(IDS[0].bcadd)
    assert c.bind(IDS[2].bcadd, REG).legacy_addr == "10.0.0.1"


def test_lease_expiry_frees_address():
    c = _ctl(pool="10.0.0.0/30", lease=5.0)
    c.bind(IDS[0].bcadd, REG)
    c.sim.run(until=5.0)
    with pytest.raises(NotFoundError):
        c.translate(IDS[0].bcadd)
    assert c.bindings() == []


@settings(max_examples=100)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, len(IDS) - 1)), max_size=40))
def test_bindings_stay_bijective(ops):
    c = _ctl(pool="10.0.0.0/29")  # six hosts for eight identities
    for is_bind, i in ops:
        if is_bind:
            try:
                c.bind(IDS[i].bcadd, REG)
            except AddressPoolExhaustedError:
                assert len(c.bindings()) == 6
        else:
            c.unbind(IDS[i].bcadd)
        active = c.bindings()
        assert len({b.legacy_addr for b in active}) == len({b.bcadd for b in active}) == len(active)
        for b in active:
            assert c.resolve(c.translate(b.bcadd)) == b.bcadd
            assert c.translate(c.resolve(b.legacy_addr)) == b.legacy_addr
            assert ipaddress.ip_address(b.legacy_addr) in c.pool


def test_forward_prefers_mobility_record():
    c = _ctl()
    rec = MobilityRecord(IDS[1].bcadd, "gnb-2", 3, 1, 0.0)
    view = LedgerState(mobility_registry={IDS[1].bcadd: rec})
    pkt = DataPacket(IDS[0].bcadd, IDS[1].bcadd, b"\x01\x02opaque", 1)
    d = c.forward(pkt, view)
    assert (d.kind, d.target) == ("gnb", "gnb-2")
    assert d.packet.ciphertext == pkt.ciphertext
    assert c.decryptions == 0


def test_forward_to_legacy_and_egress_trace(tmp_path):
    c = _ctl()
    c.bind(IDS[0].bcadd, REG)
    host = c.bind(IDS[3].bcadd, REG)
    pkt = DataPacket(IDS[0].bcadd, IDS[3].bcadd, bytes(range(64)), 9)
    d = c.forward(pkt, LedgerState())
    assert (d.kind, d.target) == ("legacy", host.legacy_addr)
    c.write_egress(tmp_path / "egress.bin")
    (frame,) = read_egress_trace(tmp_path / "egress.bin")
    assert (frame.src_addr, frame.dst_addr, frame.seq) == ("10.60.0.1", host.legacy_addr, 9)
    assert frame.payload == pkt.ciphertext


def test_forward_unknown_destination():
    with pytest.raises(DestinationUnknownError):
        _ctl().forward(DataPacket(IDS[0].bcadd, IDS[5].bcadd, b"x", 1), LedgerState())


@given(st.binary(max_size=200), st.integers(0, 2**64 - 1))
def test_packet_roundtrip(ct, seq):
    p = DataPacket(IDS[0].bcadd, IDS[1].bcadd, ct, seq)
    assert DataPacket.decode(p.encode()) == p


def test_packets_follow_handover_without_duplicates():
    w = small_world(seed=12, ues=2, tiers=("full", "full", "full", "full"), controller_tier="full")
    a, b = w.ues
    w.mobility.attach(a.bundle, "gnb-0", 0)
    w.mobility.attach(b.bundle, "gnb-1", 1)
    w.sim.run_for(0.2)
    w.exchange_packets(6)
    before = len(b.received)
    assert before == 3 and b.opened == 3
    w.mobility.handover(b.bundle, "gnb-2", 2)
    w.sim.run_for(0.2)
    w.exchange_packets(6)
    new = b.received[before:]
    assert len(new) == 3
    assert {src for src, _ in new} == {"gnb-2"}
    # each exchange re-keys, so seq restarts; ciphertexts must still be unique
    cts = [p.ciphertext for _, p in b.received]
    assert len(cts) == len(set(cts))
    assert b.opened == 6 and b.rejected == 0 and a.rejected == 0
    assert w.controller.decryptions == 0
