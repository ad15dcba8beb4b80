from dataclasses import replace
from pathlib import Path

import pytest

from decentran.consensus.base import EngineKind
from decentran.errors import ConfigError
from decentran.sim.config import LoadProfile, ScenarioConfig, load_config, parse_config

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def _err(text: str) -> ConfigError:
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return info.value


def test_empty_document_gives_defaults():
    assert parse_config("") == ScenarioConfig()


def test_shipped_scenarios_parse():
    for path in sorted(SCENARIOS.glob("*.toml")):
        cfg = load_config(path)
        assert cfg.name == path.stem


def test_full_document():
    cfg = parse_config("""
seed = 9
[consensus]
engine = "hotstuff"
nodes = 4
election_timeout_ms = [100, 200]
[load]
steps = [1, 2, 3]
rate_per_request = 50
[[faults.events]]
at_s = 2.0
node = "consensus-2"
kind = "recover"
[[faults.events]]
at_s = 1.0
node = "consensus-2"
kind = "crash"
""")
    assert cfg.engine is EngineKind.HOTSTUFF_LIKE
    assert cfg.load.offered_tps(2) == 150
    assert [e.kind for e in cfg.faults] == ["crash", "recover"]
    oc = cfg.ordering_config()
    assert oc.election_timeout_range == (0.1, 0.2)
    assert oc.work.budget is None


def test_unknown_key_reports_line():
    e = _err("seed = 1\n[consensus]\nengine = \"raft\"\nnodes = 4\nfanciness = 3\n")
    assert e.line == 5 and e.field == "consensus.fanciness"
    assert "line 5" in str(e)


def test_unknown_section():
    e = _err("seed = 1\n\n[bogus]\nx = 1\n")
    assert e.field == "bogus" and e.line == 3


@pytest.mark.parametrize("text,field,line", [
    ("[consensus]\nnodes = \"four\"\n", "consensus.nodes", 2),
    ("[network]\ncapture = 1\n", "network.capture", 2),
    ("[load]\nsteps = 3\n", "load.steps", 2),
    ("seed = true\n", "seed", 1),
    ("[network]\n\nlink_latency_ms = \"fast\"\n", "network.link_latency_ms", 3),
])
def test_wrong_types(text, field, line):
    e = _err(text)
    assert (e.field, e.line) == (field, line)


@pytest.mark.parametrize("text,field", [
    ("[consensus]\nengine = \"paxos\"\n", "consensus.engine"),
    ("[consensus]\nengine = \"solo\"\nnodes = 3\n", "consensus.nodes"),
    ("[load]\nsteps = [4, 2]\n", "load.steps"),
    ("[load]\nsteps = [0, 2]\n", "load.steps"),
    ("[load]\ntx_size = 100\n", "load.tx_size"),
    ("[consensus]\ntx_cost = 0\n", "consensus.tx_cost"),
    ("[entities]\ngnbs = 2\ngnb_tiers = [\"full\"]\n", "entities.gnb_tiers"),
    ("[entities]\ngnbs = 1\ngnb_tiers = [\"heavy\"]\n", "entities.gnb_tiers"),
    ("[entities]\nhandover_steps = 3\n", "entities.handover_steps"),
    ("seed = -1\n", "seed"),
])
def test_semantic_errors(text, field):
    e = _err(text)
    assert e.field == field
    assert e.line is not None


def test_bad_fault_events():
    assert "missing" in str(_err("[[faults.events]]\nat_s = 1\nnode = \"x\"\n"))
    assert "invalid" in str(_err("[[faults.events]]\nat_s = 1\nnode = \"x\"\nkind = \"melt\"\n"))
    assert _err("[[faults.events]]\nat_s = 1\nnode = \"x\"\nkind = \"crash\"\nwhen = 2\n").line == 1


def test_toml_syntax_error_has_line():
    e = _err("seed = 1\n[consensus\n")
    assert e.line == 2


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.toml")


def test_overrides():
    cfg = parse_config("[consensus]\nengine = \"raft\"\nnodes = 5\n")
    assert cfg.with_overrides(seed=4).seed == 4
    solo = cfg.with_overrides(engine="solo")
    assert solo.consensus.nodes == 1
    back = solo.with_overrides(engine="hotstuff")
    assert back.consensus.nodes == 4
    assert cfg.with_overrides(engine="hotstuff").consensus.nodes == 5
    assert cfg.with_overrides(steps=[1, 3]).load.steps == (1, 3)
    with pytest.raises(ConfigError):
        cfg.with_overrides(steps=[3, 1])
    with pytest.raises(ValueError):
        cfg.with_overrides(engine="paxos")


def test_load_profile_offered():
    lp = replace(LoadProfile(), steps=(2, 5), rate_per_request=40.0)
    assert lp.concurrency_steps == (2, 5)
    assert [lp.offered_tps(i) for i in range(2)] == [80.0, 200.0]
