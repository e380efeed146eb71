"""Intent-driven RAN orchestration testbed.

A desk-scale closed loop: a discrete-time cellular simulator, five network
automation apps, a natural-language intent pipeline with traffic-gated
validation, and a hierarchical Q-learning orchestrator whose action space is
pruned by a learned relevance scorer.
"""

from ranorch.config import (
    Band,
    KpiKind,
    QosDirection,
    ScenarioConfig,
    SimConfig,
    TrafficKind,
    load_scenario,
)
from ranorch.network import KpiSnapshot, NetworkState, Simulator
from ranorch.runtime import SimulationRun

__version__ = "0.1.0"

__all__ = [
    "Band",
    "KpiKind",
    "KpiSnapshot",
    "NetworkState",
    "QosDirection",
    "ScenarioConfig",
    "SimConfig",
    "Simulator",
    "SimulationRun",
    "TrafficKind",
    "load_scenario",
    "__version__",
]
