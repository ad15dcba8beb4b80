import os
from pathlib import Path

import pytest

from decentran.cli import main

CFG = """
seed = 1
[consensus]
engine = "raft"
nodes = 4
block_timeout_ms = 20
[load]
clients = 2
steps = [1]
rate_per_request = 100
step_duration_s = 0.3
drain_s = 2
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text(CFG)
    return p


def test_run_writes_only_under_out(cfg, tmp_path, capsys, monkeypatch):
    work = tmp_path / "cwd"
    work.mkdir()
    monkeypatch.chdir(work)
    out = tmp_path / "artifacts"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--engine", "hotstuff", "--steps", "1,2"]) == 0
    text = capsys.readouterr().out
    assert "engine=hotstuff seed=1" in text
    assert "p95 ms" in text
    assert list(work.iterdir()) == []
    assert (out / "metrics.csv").read_text().splitlines()[2].split(",")[6:] == ["hotstuff", "1"]
    assert main(["verify-chain", "--out", str(out)]) == 0
    assert "valid" in capsys.readouterr().out


def test_seed_override(cfg, tmp_path):
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "9"]) == 0
    assert (tmp_path / "o" / "metrics.csv").read_text().splitlines()[1].endswith(",raft,9")


def test_corrupt_chain_fails(cfg, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    chain = out / "chain.bin"
    data = bytearray(chain.read_bytes())
    data[len(data) // 2] ^= 0x10
    chain.write_bytes(bytes(data))
    assert main(["verify-chain", "--chain", str(chain)]) == 1
    assert "INVALID" in capsys.readouterr().out
    assert main(["verify-chain", "--chain", str(tmp_path / "missing.bin")]) == 1


@pytest.mark.parametrize("argv", [
    ["run"],
    ["run", "--config", "does-not-exist.toml"],
    ["frobnicate"],
    ["run", "--config", "x.toml", "--steps", "a,b"],
])
def test_config_and_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    assert list(tmp_path.iterdir()) == []


def test_invalid_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[consensus]\nengine = \"paxos\"\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_sweep(cfg, tmp_path, capsys):
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "sw"), "--engine", "solo,raft"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("step,offered_tps")
    assert [l.split(",")[6] for l in lines[1:]] == ["solo", "raft"]


def test_demo_auth(capsys):
    assert main(["demo-auth", "--trials", "20"]) == 0
    assert "20/20 verified" in capsys.readouterr().out


def test_demo_mitm(capsys):
    assert main(["demo-mitm", "--trials", "50", "--seed", "3"]) == 0
    assert "successful MitM sessions: 0" in capsys.readouterr().out


def test_demo_handover(tmp_path, capsys):
    assert main(["demo-handover", "--steps", "4", "--out", str(tmp_path / "h")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert sum("completed" in l for l in out) >= 4
    assert (tmp_path / "h" / "chain.bin").exists()
