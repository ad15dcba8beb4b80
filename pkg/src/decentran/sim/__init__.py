from .config import FaultEvent, LoadProfile, ScenarioConfig, load_config, parse_config
from .core import NodeCpu, Simulator
from .network import SimNetwork, SimNetworkConfig

__all__ = [
    "FaultEvent",
    "LoadProfile",
    "NodeCpu",
    "ScenarioConfig",
    "SimNetwork",
    "SimNetworkConfig",
    "Simulator",
    "load_config",
    "parse_config",
]
