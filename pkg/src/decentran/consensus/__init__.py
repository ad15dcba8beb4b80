"""Pluggable ordering engines behind one submit/commit contract."""

from .base import (
    Ack,
    ConsensusEngine,
    ConsensusNode,
    EngineKind,
    Fault,
    OrderingConfig,
    PeerReplica,
    WorkModel,
    safety_violations,
)
from .hotstuff import HotStuffEngine, QuorumCertificate, verify_qc
from .raft import RaftEngine
from .solo import SoloEngine

_ENGINES = {
    EngineKind.SOLO: SoloEngine,
    EngineKind.RAFT_LIKE: RaftEngine,
    EngineKind.HOTSTUFF_LIKE: HotStuffEngine,
}


def make_engine(sim, net, config: OrderingConfig, **kwargs) -> ConsensusEngine:
    return _ENGINES[config.engine](sim, net, config, **kwargs)


__all__ = [
    "Ack",
    "ConsensusEngine",
    "ConsensusNode",
    "EngineKind",
    "Fault",
    "HotStuffEngine",
    "OrderingConfig",
    "PeerReplica",
    "QuorumCertificate",
    "RaftEngine",
    "SoloEngine",
    "WorkModel",
    "make_engine",
    "safety_violations",
    "verify_qc",
]
