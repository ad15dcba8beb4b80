"""Library side of the ``demo-*`` commands: honest and adversarial handshakes, a handover walk."""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .auth import Challenge, Hello, Response, run_handshake
from .identity import BcAdd, generate_identity
from .sim.config import ConsensusSection, EntitySection, ScenarioConfig
from .sim.harness import ScenarioResult, run_scenario

MITM_FIELDS = ("bcadd", "pk", "add", "nonce")
_STAGES_FOR = {
    "bcadd": ("hello", "challenge"),
    "pk": ("hello", "challenge"),
    "add": ("hello", "challenge"),
    "nonce": ("hello", "challenge", "response"),
}


class StaticRegistry:
    """A fixed set of registered BcAdds standing in for a ledger snapshot."""

    def __init__(self, bcadds=()):
        self._known = set(bcadds)

    def add(self, bcadd: BcAdd) -> None:
        self._known.add(bcadd)

    def is_registered(self, bcadd: BcAdd) -> bool:
        return bcadd in self._known


@dataclass
class AuthStats:
    trials: int = 0
    verified_both: int = 0
    keys_equal: int = 0

    @property
    def all_ok(self) -> bool:
        return self.trials == self.verified_both == self.keys_equal


def honest_trials(n: int, seed: int = 0) -> AuthStats:
    rng = random.Random(seed)
    stats = AuthStats()
    for i in range(n):
        a = generate_identity(rng.randbytes(16))
        b = generate_identity(rng.randbytes(16))
        reg = StaticRegistry([a.bcadd, b.bcadd])
        ia, rb = run_handshake(a, b, reg, initiator_add=f"a{i}", responder_add=f"b{i}", rng=rng)
        stats.trials += 1
        if ia.verified and rb.verified:
            stats.verified_both += 1
            if ia.session_key == rb.session_key and len(ia.session_key) == 32:
                stats.keys_equal += 1
    return stats


@dataclass
class MitmTrial:
    field: str
    stage: str
    initiator_state: str
    responder_state: str
    adversary_verified: bool
    one_side_failed: bool


@dataclass
class MitmStats:
    trials: list[MitmTrial] = field(default_factory=list)

    @property
    def adversary_verified(self) -> int:
        return sum(t.adversary_verified for t in self.trials)

    @property
    def detected(self) -> int:
        return sum(t.one_side_failed for t in self.trials)


def _substitute(msg, name: str, attacker, rng: random.Random):
    if name == "bcadd":
        return replace(msg, bcadd=attacker.bcadd)
    if name == "pk":
        return replace(msg, public_key=attacker.public_key)
    if name == "add":
        return replace(msg, add="mitm-relay")
    # nonce: a fresh value the adversary controls
    fresh = rng.randbytes(16)
    if isinstance(msg, Response):
        return replace(msg, echo_nonce=fresh)
    if isinstance(msg, Challenge) and rng.random() < 0.5:
        return replace(msg, echo_nonce=fresh)
    return replace(msg, nonce=fresh)


def mitm_trials(n: int, seed: int = 0) -> MitmStats:
    """Relay honest handshakes through an adversary that rewrites one field.

    The adversary holds its own registered identity, so substituted BcAdds
    and keys are valid ledger entries. A trial counts as an adversary success
    if any honest side verifies with a view of its peer that differs from the
    genuine peer, or if both sides verify despite the rewrite.
    """
    rng = random.Random(seed)
    stats = MitmStats()
    for i in range(n):
        a = generate_identity(rng.randbytes(16))
        b = generate_identity(rng.randbytes(16))
        mallory = generate_identity(rng.randbytes(16))
        reg = StaticRegistry([a.bcadd, b.bcadd, mallory.bcadd])
        name = rng.choice(MITM_FIELDS)
        stage = rng.choice(_STAGES_FOR[name])
        sent = {}

        def tamper(at, msg, name=name, stage=stage):
            sent[at] = msg
            if at == stage:
                return _substitute(msg, name, mallory, rng)
            return msg

        add_a, add_b = f"a{i}", f"b{i}"
        ia, rb = run_handshake(a, b, reg, initiator_add=add_a, responder_add=add_b, rng=rng, tamper=tamper)
        fooled = False
        if ia.verified:
            fooled |= (ia.peer_bcadd, ia.peer_public_key, ia.peer_add) != (b.bcadd, b.public_key, add_b)
            fooled |= ia.peer_nonce != rb.local_nonce
        if rb.verified:
            fooled |= (rb.peer_bcadd, rb.peer_public_key, rb.peer_add) != (a.bcadd, a.public_key, add_a)
            fooled |= rb.peer_nonce != ia.local_nonce
        fooled |= ia.verified and rb.verified
        stats.trials.append(MitmTrial(
            name, stage, ia.state.value, rb.state.value, fooled,
            ia.state.value == "failed" or rb.state.value == "failed",
        ))
    return stats


def handover_demo(seed: int = 0, steps: int = 10, engine: str = "raft") -> ScenarioResult:
    nodes = 1 if engine == "solo" else 4
    cfg = ScenarioConfig(
        name="demo-handover",
        seed=seed,
        consensus=ConsensusSection(engine=engine, nodes=nodes),
        entities=EntitySection(
            gnbs=4, ues=1, gnb_tiers=("full", "full", "light", "cache"), handover_steps=steps,
        ),
    )
    return run_scenario(cfg)


__all__ = [
    "AuthStats",
    "Hello",
    "MitmStats",
    "StaticRegistry",
    "handover_demo",
    "honest_trials",
    "mitm_trials",
]
