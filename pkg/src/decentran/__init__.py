"""Ledger-backed identity, authentication and mobility for a decentralized RAN, in simulation."""

from .auth import (
    HandshakeSession,
    HandshakeState,
    handshake_finalize,
    handshake_initiate,
    handshake_respond,
    open_payload,
    run_handshake,
    seal_payload,
)
from .controller import NetController
from .identity import BcAdd, IdentityBundle, RealId, derive_app_id, generate_identity, rotate_bcadd
from .ledger import Block, LedgerState, Transaction, apply_block, replay, verify_chain
from .mobility import MobilityManager
from .sim.config import ScenarioConfig, load_config
from .sim.harness import run_scenario, sweep

__version__ = "0.1.0"

__all__ = [
    "BcAdd",
    "Block",
    "HandshakeSession",
    "HandshakeState",
    "IdentityBundle",
    "LedgerState",
    "MobilityManager",
    "NetController",
    "RealId",
    "ScenarioConfig",
    "Transaction",
    "apply_block",
    "derive_app_id",
    "generate_identity",
    "handshake_finalize",
    "handshake_initiate",
    "handshake_respond",
    "load_config",
    "open_payload",
    "replay",
    "rotate_bcadd",
    "run_handshake",
    "seal_payload",
    "sweep",
    "run_scenario",
    "verify_chain",
]
