import itertools

from decentran.consensus import EngineKind, OrderingConfig, WorkModel, make_engine
from decentran.identity import generate_identity
from decentran.ledger import PAYLOAD_SIZE, TxKind, make_transaction
from decentran.sim.core import Simulator
from decentran.sim.network import SimNetwork, SimNetworkConfig

_client = generate_identity(b"tests/client")
_nonce = itertools.count(1)


def payload_tx(now: float = 0.0, bundle=_client, nonce: int | None = None):
    n = next(_nonce) if nonce is None else nonce
    return make_transaction(bundle.keypair, TxKind.PAYLOAD, bytes(PAYLOAD_SIZE), n, now)


def cluster(engine: str = "raft", n: int = 4, seed: int = 0, peers: int = 0, **cfg):
    kind = EngineKind(engine)
    work = cfg.pop("work", WorkModel())
    conf = OrderingConfig(engine=kind, n_consensus_nodes=1 if kind is EngineKind.SOLO else n, work=work, **cfg)
    sim = Simulator(seed)
    net = SimNetwork(sim, SimNetworkConfig(seed=seed))
    eng = make_engine(sim, net, conf)
    for i in range(peers):
        eng.add_peer(f"peer-{i}")
    eng.start()
    return sim, net, eng


def small_world(seed: int = 0, engine: str = "raft", tiers=("full", "full", "light", "cache"), ues: int = 1,
                refresh_ms: float = 500.0, **entities):
    """A registered world with every UE already authenticated to every gNB."""
    from decentran.sim.config import ConsensusSection, EntitySection, ScenarioConfig
    from decentran.sim.harness import World

    cfg = ScenarioConfig(
        seed=seed,
        consensus=ConsensusSection(engine=engine, nodes=1 if engine == "solo" else 4),
        entities=EntitySection(gnbs=len(tiers), ues=ues, gnb_tiers=tuple(tiers),
                               refresh_interval_ms=refresh_ms, **entities),
    )
    world = World(cfg)
    world.register_all()
    for ue in world.ues:
        for g in world.gnbs.values():
            assert world.handshake(ue, g)
    return world


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
