"""Scenario configuration files.

A scenario is a TOML document with the sections ``[network]``,
``[consensus]``, ``[load]``, ``[entities]`` and ``[faults]``, plus the
top-level keys ``name`` and ``seed``. Every section is optional. Unknown
keys and wrongly typed values are rejected with the offending line.

Durations are given in milliseconds (``*_ms``) or seconds (``*_s``) as the key
name says. Example::

    seed = 7

    [consensus]
    engine = "raft"
    nodes = 4
    budget = 100000
    tx_cost = 50

    [load]
    steps = [2, 4, 8]
    rate_per_request = 200

    [[faults.events]]
    at_s = 1.5
    node = "consensus-1"
    kind = "crash"
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..consensus.base import EngineKind, Fault, OrderingConfig, WorkModel
from ..errors import ConfigError
from ..ledger import PAYLOAD_SIZE
from ..tiers import Tier
from .network import SimNetworkConfig


@dataclass(frozen=True)
class NetworkSection:
    link_latency_ms: float = 0.2
    bandwidth_mbps: float = 10_000.0
    jitter_ms: float = 0.02
    capture: bool = False


@dataclass(frozen=True)
class ConsensusSection:
    engine: str = "solo"
    nodes: int = 1
    peers: int = 0
    max_block_txs: int = 500
    block_timeout_ms: float = 50.0
    rotation_interval_ms: float = 100.0
    election_timeout_ms: tuple = (150.0, 300.0)
    heartbeat_ms: float = 50.0
    mempool_capacity: int = 100_000
    budget: float = 0.0
    tx_cost: float = 1.0
    block_cost: float = 0.0
    vote_cost: float = 0.0


@dataclass(frozen=True)
class LoadProfile:
    """Stepped open-loop load.

    During step ``i`` there are ``steps[i]`` concurrent request streams, each
    offering ``rate_per_request`` transactions per second, spread round-robin
    over ``clients`` sending identities.
    """

    clients: int = 6
    tx_size: int = PAYLOAD_SIZE
    steps: tuple = ()
    rate_per_request: float = 100.0
    step_duration_s: float = 1.0
    drain_s: float = 10.0

    @property
    def concurrency_steps(self) -> tuple:
        return self.steps

    def offered_tps(self, step: int) -> float:
        return self.steps[step] * self.rate_per_request


@dataclass(frozen=True)
class EntitySection:
    gnbs: int = 0
    ues: int = 0
    gnb_tiers: tuple = ()
    refresh_interval_ms: float = 500.0
    cache_relay: bool = True
    controller_tier: str = "cache"
    handover_steps: int = 0
    packets: int = 0
    legacy_hosts: int = 0
    pool: str = "10.60.0.0/24"
    lease_s: float = 10_000.0


@dataclass(frozen=True)
class FaultEvent:
    at_s: float
    node: str
    kind: str


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    network: NetworkSection = field(default_factory=NetworkSection)
    consensus: ConsensusSection = field(default_factory=ConsensusSection)
    load: LoadProfile = field(default_factory=LoadProfile)
    entities: EntitySection = field(default_factory=EntitySection)
    faults: tuple = ()

    @property
    def engine(self) -> EngineKind:
        return EngineKind(self.consensus.engine)

    def network_config(self) -> SimNetworkConfig:
        n = self.network
        return SimNetworkConfig(
            link_latency=n.link_latency_ms / 1e3,
            bandwidth=n.bandwidth_mbps * 1e6,
            jitter=n.jitter_ms / 1e3,
            seed=self.seed,
        )

    def ordering_config(self) -> OrderingConfig:
        c = self.consensus
        lo, hi = c.election_timeout_ms
        return OrderingConfig(
            engine=self.engine,
            n_consensus_nodes=c.nodes,
            max_block_txs=c.max_block_txs,
            block_timeout=c.block_timeout_ms / 1e3,
            rotation_interval=c.rotation_interval_ms / 1e3,
            election_timeout_range=(lo / 1e3, hi / 1e3),
            heartbeat_interval=c.heartbeat_ms / 1e3,
            mempool_capacity=c.mempool_capacity,
            work=WorkModel(
                budget=c.budget or None,
                tx_cost=c.tx_cost,
                block_cost=c.block_cost,
                vote_cost=c.vote_cost,
            ),
        )

    def with_overrides(self, *, seed=None, engine=None, steps=None) -> "ScenarioConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if engine is not None:
            cons = replace(cfg.consensus, engine=engine)
            if EngineKind(engine) is EngineKind.SOLO:
                cons = replace(cons, nodes=1)
            elif cons.nodes == 1:
                cons = replace(cons, nodes=4)
            cfg = replace(cfg, consensus=cons)
        if steps is not None:
            cfg = replace(cfg, load=replace(cfg.load, steps=tuple(steps)))
        _validate(cfg, None)
        return cfg


_SECTIONS = {
    "network": NetworkSection,
    "consensus": ConsensusSection,
    "load": LoadProfile,
    "entities": EntitySection,
}
_TOP_LEVEL = {"name": str, "seed": int}


class _Lines:
    """Best-effort map from (section, key) to a 1-based line number."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def find(self, section: str | None, key: str | None = None) -> int | None:
        current = None
        for i, raw in enumerate(self.lines, start=1):
            line = raw.split("#", 1)[0].strip()
            m = re.match(r"^\[\[?\s*([\w.]+)\s*\]\]?$", line)
            if m:
                current = m.group(1)
                if key is None and current == section:
                    return i
                continue
            if key is not None and (current or None) == section and re.match(
                rf"^{re.escape(key)}\s*=", line
            ):
                return i
        return None


def _coerce(value, default, where: str, line: int | None):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", where, line)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", where, line)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", where, line)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", where, line)
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", where, line)
        return tuple(value)
    return value


def _section(cls, table, name: str, lines: _Lines):
    if not isinstance(table, dict):
        raise ConfigError("expected a table", name, lines.find(None, name))
    defaults = {f.name: f.default for f in fields(cls)}
    kwargs = {}
    for key, value in table.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r}", f"{name}.{key}", lines.find(name, key))
        kwargs[key] = _coerce(value, defaults[key], f"{name}.{key}", lines.find(name, key))
    return cls(**kwargs)


def _faults(table, lines: _Lines) -> tuple:
    if not isinstance(table, dict):
        raise ConfigError("expected a table", "faults", lines.find("faults"))
    extra = set(table) - {"events"}
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"unknown key {key!r}", f"faults.{key}", lines.find("faults", key))
    events = table.get("events", [])
    if not isinstance(events, list):
        raise ConfigError("expected an array of tables", "faults.events", lines.find("faults", "events"))
    out = []
    line = lines.find("faults.events") or lines.find("faults", "events")
    for i, ev in enumerate(events):
        where = f"faults.events[{i}]"
        if not isinstance(ev, dict):
            raise ConfigError("expected a table", where, line)
        unknown = set(ev) - {"at_s", "node", "kind"}
        if unknown:
            raise ConfigError(f"unknown key {sorted(unknown)[0]!r}", where, line)
        try:
            kind = Fault(ev["kind"]).value
            out.append(FaultEvent(float(ev["at_s"]), str(ev["node"]), kind))
        except KeyError as exc:
            raise ConfigError(f"missing key {exc.args[0]!r}", where, line) from None
        except (TypeError, ValueError):
            raise ConfigError(f"invalid fault {ev!r}", where, line) from None
    return tuple(sorted(out, key=lambda e: e.at_s))


def _check(cond: bool, message: str, where: str, lines: _Lines | None):
    if not cond:
        section, dot, key = where.partition(".")
        line = None
        if lines:
            line = lines.find(section, key) if dot else lines.find(None, section)
        raise ConfigError(message, where, line)


def _validate(cfg: ScenarioConfig, lines: _Lines | None) -> None:
    n, c, ld, e = cfg.network, cfg.consensus, cfg.load, cfg.entities
    _check(cfg.seed >= 0, "seed must be non-negative", "seed", lines)
    _check(n.link_latency_ms >= 0, "latency must be >= 0", "network.link_latency_ms", lines)
    _check(n.bandwidth_mbps > 0, "bandwidth must be > 0", "network.bandwidth_mbps", lines)
    _check(n.jitter_ms >= 0, "jitter must be >= 0", "network.jitter_ms", lines)
    _check(c.engine in {k.value for k in EngineKind},
           f"engine must be one of {sorted(k.value for k in EngineKind)}", "consensus.engine", lines)
    _check(c.nodes >= 1, "need at least one consensus node", "consensus.nodes", lines)
    _check(c.engine != "solo" or c.nodes == 1, "solo ordering uses exactly one node",
           "consensus.nodes", lines)
    _check(c.peers >= 0, "peers must be >= 0", "consensus.peers", lines)
    _check(len(c.election_timeout_ms) == 2 and 0 < c.election_timeout_ms[0] <= c.election_timeout_ms[1],
           "election_timeout_ms must be [lo, hi] with 0 < lo <= hi", "consensus.election_timeout_ms", lines)
    _check(c.budget >= 0, "budget must be >= 0", "consensus.budget", lines)
    _check(c.tx_cost > 0, "tx_cost must be > 0", "consensus.tx_cost", lines)
    _check(ld.clients >= 1, "need at least one client", "load.clients", lines)
    _check(ld.tx_size == PAYLOAD_SIZE, f"tx_size is fixed at {PAYLOAD_SIZE} bytes", "load.tx_size", lines)
    _check(all(isinstance(s, int) and s > 0 for s in ld.steps), "steps must be positive integers",
           "load.steps", lines)
    _check(all(a < b for a, b in zip(ld.steps, ld.steps[1:])), "steps must be strictly increasing",
           "load.steps", lines)
    _check(ld.rate_per_request > 0, "rate_per_request must be > 0", "load.rate_per_request", lines)
    _check(ld.step_duration_s > 0, "step_duration_s must be > 0", "load.step_duration_s", lines)
    _check(e.gnbs >= 0 and e.ues >= 0, "counts must be >= 0", "entities.gnbs", lines)
    _check(len(e.gnb_tiers) in (0, e.gnbs), "gnb_tiers needs one entry per gNB", "entities.gnb_tiers", lines)
    tiers = {t.value for t in Tier}
    _check(all(t in tiers for t in e.gnb_tiers), f"tiers must be among {sorted(tiers)}",
           "entities.gnb_tiers", lines)
    _check(e.controller_tier in tiers, f"controller_tier must be among {sorted(tiers)}",
           "entities.controller_tier", lines)
    _check(e.refresh_interval_ms > 0, "refresh_interval_ms must be > 0", "entities.refresh_interval_ms", lines)
    _check(e.handover_steps == 0 or (e.gnbs >= 2 and e.ues >= 1),
           "handover walk needs >= 2 gNBs and a UE", "entities.handover_steps", lines)
    _check(e.packets == 0 or e.ues >= 2 or e.legacy_hosts >= 1,
           "data forwarding needs two UEs or a legacy host", "entities.packets", lines)
    try:
        cfg.ordering_config()
    except ValueError as exc:
        raise ConfigError(str(exc), "consensus", lines.find("consensus") if lines else None) from None


def parse_config(text: str) -> ScenarioConfig:
    lines = _Lines(text)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"not valid TOML: {exc}", None, int(m.group(1)) if m else None) from None
    kwargs = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            kwargs[key] = _section(_SECTIONS[key], value, key, lines)
        elif key == "faults":
            kwargs["faults"] = _faults(value, lines)
        elif key in _TOP_LEVEL:
            typ = _TOP_LEVEL[key]
            if not isinstance(value, typ) or isinstance(value, bool):
                raise ConfigError(f"expected {typ.__name__}, got {value!r}", key, lines.find(None, key))
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown key {key!r}", key, lines.find(None, key) or lines.find(key))
    cfg = ScenarioConfig(**kwargs)
    _validate(cfg, lines)
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from None
    return parse_config(text)
