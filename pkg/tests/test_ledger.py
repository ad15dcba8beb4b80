from dataclasses import replace

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from chaingen import random_chain
from decentran.errors import ChainBreakError, DecodeError
from decentran.identity import generate_identity
from decentran.ledger import (
    PAYLOAD_SIZE,
    Block,
    LedgerReplica,
    LedgerState,
    Role,
    Transaction,
    TxKind,
    apply_block,
    apply_block_with_outcomes,
    check_transaction,
    dump_chain,
    genesis_block,
    identity_register_body,
    load_chain,
    make_transaction,
    mobility_update_body,
    policy_set_body,
    replay,
    validate_transaction,
    verify_chain,
    verify_dump,
)
from oracles import ledger_ref


def _registered(*bundles, role=Role.UE):
    txs = [make_transaction(b.keypair, TxKind.IDENTITY_REGISTER, identity_register_body(b.public_key, role), 1, 0.0)
           for b in bundles]
    g = genesis_block()
    return apply_block(apply_block(LedgerState(), g), Block.build(1, g.block_hash, txs, "t", 0.1))


def test_fresh_register_valid_and_replay_rejected():
    a = generate_identity(b"a")
    tx = make_transaction(a.keypair, TxKind.IDENTITY_REGISTER, identity_register_body(a.public_key, Role.UE), 1, 0.0)
    assert validate_transaction(tx, LedgerState())
    st_ = _registered(a)
    assert check_transaction(tx, st_) == "stale-nonce"


def test_flipped_signature_rejected():
    a = generate_identity(b"a")
    s = _registered(a)
    tx = make_transaction(a.keypair, TxKind.MOBILITY_UPDATE, mobility_update_body("gnb-0", 1, 1), 2, 0.2)
    assert validate_transaction(tx, s)
    bad = replace(tx, signature=bytes([tx.signature[0] ^ 0x80]) + tx.signature[1:])
    assert check_transaction(bad, s) == "bad-signature"


def test_mobility_needs_registration_and_sequence():
    a, b = generate_identity(b"a"), generate_identity(b"b")
    s = _registered(a)
    other = make_transaction(b.keypair, TxKind.MOBILITY_UPDATE, mobility_update_body("g", 1, 1), 1, 0)
    assert check_transaction(other, s) == "unregistered-sender"
    jump = make_transaction(a.keypair, TxKind.MOBILITY_UPDATE, mobility_update_body("g", 1, 2), 2, 0)
    assert check_transaction(jump, s) == "sequence-conflict"


def test_policy_requires_gnb_role():
    ue, gnb = generate_identity(b"ue"), generate_identity(b"gnb")
    g = genesis_block()
    txs = [
        make_transaction(ue.keypair, TxKind.IDENTITY_REGISTER, identity_register_body(ue.public_key, Role.UE), 1, 0),
        make_transaction(gnb.keypair, TxKind.IDENTITY_REGISTER, identity_register_body(gnb.public_key, Role.GNB), 1, 0),
    ]
    s = apply_block(apply_block(LedgerState(), g), Block.build(1, g.block_hash, txs, "t", 0.1))
    by_ue = make_transaction(ue.keypair, TxKind.POLICY_SET, policy_set_body(gnb.bcadd, 1), 2, 0.2)
    by_gnb = make_transaction(gnb.keypair, TxKind.POLICY_SET, policy_set_body(ue.bcadd, 1), 2, 0.2)
    assert check_transaction(by_ue, s) == "not-authorized"
    assert validate_transaction(by_gnb, s)


def test_payload_size_checked():
    a = generate_identity(b"a")
    s = _registered(a)
    assert validate_transaction(make_transaction(a.keypair, TxKind.PAYLOAD, bytes(PAYLOAD_SIZE), 2, 0), s)
    assert check_transaction(make_transaction(a.keypair, TxKind.PAYLOAD, b"x", 2, 0), s) == "bad-payload-size"


def test_register_with_foreign_key_rejected():
    a, b = generate_identity(b"a"), generate_identity(b"b")
    tx = make_transaction(a.keypair, TxKind.IDENTITY_REGISTER, identity_register_body(b.public_key, Role.UE), 1, 0)
    assert check_transaction(tx, LedgerState()) == "bcadd-mismatch"


def test_empty_block_only_advances_height():
    s = apply_block(LedgerState(), genesis_block())
    blk = Block.build(1, s.head_hash, (), "t", 1.0)
    s2 = apply_block(s, blk)
    assert s2.chain_height == s.chain_height + 1
    assert (s2.identity_registry, s2.mobility_registry, s2.nonces) == (s.identity_registry, s.mobility_registry, s.nonces)


def test_single_register_adds_one_entry_and_is_pure():
    a = generate_identity(b"a")
    s = apply_block(LedgerState(), genesis_block())
    before = s.encode()
    tx = make_transaction(a.keypair, TxKind.IDENTITY_REGISTER, identity_register_body(a.public_key, Role.UE), 1, 0)
    s2 = apply_block(s, Block.build(1, s.head_hash, [tx], "t", 0.1))
    assert list(s2.identity_registry) == [a.bcadd]
    assert s.encode() == before


def test_chain_break():
    s = apply_block(LedgerState(), genesis_block())
    with pytest.raises(ChainBreakError):
        apply_block(s, Block.build(1, b"\x01" * 32, (), "t", 0.1))
    with pytest.raises(ChainBreakError):
        apply_block(s, Block.build(2, s.head_hash, (), "t", 0.1))


def test_intra_block_order_counts():
    a = generate_identity(b"a")
    reg = make_transaction(a.keypair, TxKind.IDENTITY_REGISTER, identity_register_body(a.public_key, Role.UE), 1, 0)
    mob = make_transaction(a.keypair, TxKind.MOBILITY_UPDATE, mobility_update_body("g", 1, 1), 2, 0)
    s = apply_block(LedgerState(), genesis_block())
    _, ok = apply_block_with_outcomes(s, Block.build(1, s.head_hash, [reg, mob], "t", 0.1))
    _, swapped = apply_block_with_outcomes(s, Block.build(1, s.head_hash, [mob, reg], "t", 0.1))
    assert ok == [None, None]
    assert swapped == ["unregistered-sender", None]


@pytest.mark.parametrize("seed", range(4))
def test_replay_matches_fold_oracle(seed):
    chain = random_chain(seed, 50)
    state = replay(chain)
    ids, mob, pol, nonces = ledger_ref.fold(chain)
    assert {k.value: (r.public_key, int(r.role), r.registered_height) for k, r in state.identity_registry.items()} == ids
    assert {k.value: (m.serving_gnb, m.cell_id, m.sequence, m.updated_at) for k, m in state.mobility_registry.items()} == mob
    assert {k.value: v for k, v in state.policy_table.items()} == pol
    assert {k.value: v for k, v in state.nonces.items()} == nonces
    # the generator must actually exercise both paths
    outcomes = []
    s = LedgerState()
    for b in chain:
        s, o = apply_block_with_outcomes(s, b)
        outcomes += o
    assert None in outcomes and any(o is not None for o in outcomes)


def test_two_replicas_byte_identical():
    chain = random_chain(9, 50)
    r1, r2 = LedgerReplica(), LedgerReplica()
    for b in chain[1:]:
        r1.append(b)
    for b in load_chain(dump_chain(chain))[1:]:
        r2.append(b)
    assert r1.state.encode() == r2.state.encode()
    assert r1.persisted_bytes() == r2.persisted_bytes()
    assert LedgerState.decode(r1.state.encode()).encode() == r1.state.encode()


def test_verify_chain_basic_cases():
    chain = random_chain(3, 100, max_txs=3)
    assert verify_chain(chain)
    assert verify_chain(chain[:1])
    assert verify_dump(dump_chain(chain))
    tampered = list(chain)
    b = tampered[37]
    assert b.txs, "fixture needs a non-empty block 37"
    body = bytearray(b.txs[0].body)
    body[0] ^= 1
    tx = replace(b.txs[0], body=bytes(body))
    tampered[37] = replace(b, txs=(tx,) + b.txs[1:])
    assert not verify_chain(tampered)
    assert not verify_chain(chain[:10] + chain[11:])
    assert not verify_chain(chain, max_block_txs=1)


_DUMP = dump_chain(random_chain(21, 12, max_txs=3))


@settings(max_examples=300, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, len(_DUMP) * 8 - 1))
def test_any_single_bit_flip_detected(bit):
    data = bytearray(_DUMP)
    data[bit // 8] ^= 1 << (bit % 8)
    assert not verify_dump(bytes(data))


def test_exhaustive_bit_flips_small_chain():
    data = dump_chain(random_chain(2, 3, max_txs=1))
    for bit in range(len(data) * 8):
        d = bytearray(data)
        d[bit // 8] ^= 1 << (bit % 8)
        assert not verify_dump(bytes(d)), bit


@given(
    kind=st.sampled_from(list(TxKind)),
    body=st.binary(max_size=300),
    nonce=st.integers(0, 2**64 - 1),
    t=st.floats(0, 1e6, allow_nan=False),
    sig=st.binary(max_size=80),
)
def test_transaction_encoding_roundtrip(kind, body, nonce, t, sig):
    a = generate_identity(b"enc")
    tx = Transaction(kind, a.bcadd, body, nonce, round(t * 1e9) / 1e9, sig)
    assert Transaction.decode(tx.encode()) == tx


@given(st.binary(max_size=64))
def test_garbage_never_crashes_decoder(data):
    try:
        Block.decode(data)
    except (DecodeError, ValueError):
        pass
    assert not verify_dump(data) or data == b""


def test_block_roundtrip_and_hash():
    chain = random_chain(4, 5)
    for b in chain:
        assert Block.decode(b.encode()) == b
        assert b.compute_hash() == b.block_hash
    assert chain[0].prev_hash == bytes(32)


def test_no_tx_applied_twice():
    chain = random_chain(6, 40)
    applied = []
    s = LedgerState()
    for b in chain:
        s, outcomes = apply_block_with_outcomes(s, b)
        applied += [(tx.sender, tx.nonce) for tx, o in zip(b.txs, outcomes) if o is None]
    assert len(applied) == len(set(applied))
