"""Seeded fault campaigns: random fault schedules kept within each engine's tolerance."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..consensus import Fault, safety_violations
from ..ledger import verify_chain
from .config import ConsensusSection, FaultEvent, LoadProfile, ScenarioConfig
from .harness import run_scenario

FAULT_WINDOW_S = 1.0


def random_faults(engine: str, n: int, rng: random.Random, window: float = FAULT_WINDOW_S) -> tuple:
    """Draw a fault schedule that never exceeds the engine's fault threshold.

    Raft-like: up to f < n/2 nodes crash, most recover later, and one may be
    isolated for a while instead. HotStuff-like: up to f < n/3 nodes
    equivocate whenever they lead. Clusters too small to tolerate a fault get
    an empty schedule. Solo: the single node crashes and recovers.
    """
    ids = [f"consensus-{i}" for i in range(n)]
    events = []
    if engine == "raft":
        if n < 3:
            return ()
        victims = rng.sample(ids, rng.randint(1, (n - 1) // 2))
        for v in victims:
            t = rng.uniform(0, window)
            if rng.random() < 0.3:
                events.append(FaultEvent(t, v, Fault.PARTITION.value))
                events.append(FaultEvent(t + rng.uniform(0.05, window), v, Fault.HEAL.value))
                continue
            events.append(FaultEvent(t, v, Fault.CRASH.value))
            if rng.random() < 0.7:
                events.append(FaultEvent(t + rng.uniform(0.05, window), v, Fault.RECOVER.value))
    elif engine == "hotstuff":
        if n < 4:
            return ()
        for v in rng.sample(ids, rng.randint(1, (n - 1) // 3)):
            events.append(FaultEvent(rng.uniform(0, window / 2), v, Fault.BYZANTINE_EQUIVOCATE.value))
    else:
        t = rng.uniform(0, window)
        events.append(FaultEvent(t, ids[0], Fault.CRASH.value))
        events.append(FaultEvent(t + rng.uniform(0.05, window), ids[0], Fault.RECOVER.value))
    return tuple(sorted(events, key=lambda e: e.at_s))


@dataclass
class FaultTrial:
    engine: str
    seed: int
    faults: tuple
    violations: list[int]
    height: int
    equivocations: int
    chain_valid: bool
    honest_heights: dict[str, int] = field(repr=False)

    @property
    def safe(self) -> bool:
        return not self.violations


def fault_trial(engine: str, seed: int, *, nodes: int | None = None, peers: int = 1,
                rate: float = 200.0) -> FaultTrial:
    """One short loaded run with a random tolerable fault schedule."""
    n = nodes or (1 if engine == "solo" else 4)
    rng = random.Random(f"faults/{engine}/{seed}")
    faults = random_faults(engine, n, rng)
    cfg = ScenarioConfig(
        name=f"faults-{engine}",
        seed=seed,
        consensus=ConsensusSection(engine=engine, nodes=n, peers=peers, block_timeout_ms=20,
                                   rotation_interval_ms=40, election_timeout_ms=(60.0, 120.0),
                                   heartbeat_ms=20),
        load=LoadProfile(clients=2, steps=(1,), rate_per_request=rate,
                         step_duration_s=FAULT_WINDOW_S * 1.5, drain_s=1.5),
        faults=faults,
    )
    result = run_scenario(cfg)
    replicas = result.world.engine.honest_replicas()
    return FaultTrial(
        engine=engine,
        seed=seed,
        faults=faults,
        violations=safety_violations(r.chain for r in replicas.values()),
        height=max(r.height for r in replicas.values()),
        equivocations=sum(",equivocate," in line for line in result.world.sim.trace),
        chain_valid=all(verify_chain(r.chain, cfg.consensus.max_block_txs) for r in replicas.values()),
        honest_heights={k: r.height for k, r in replicas.items()},
    )


def fault_campaign(engine: str, runs: int, first_seed: int = 0, **kw) -> list[FaultTrial]:
    return [fault_trial(engine, first_seed + i, **kw) for i in range(runs)]
