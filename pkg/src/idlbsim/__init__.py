"""Packet-level simulator for load-balanced routing in a polar LEO constellation."""
from __future__ import annotations

__version__ = "0.1.0"

from .config import ScenarioConfig, build_scenario, load_config
from .engine import Scenario, Simulator, run, run_with_traces
from .metrics import MetricsReport, compare

__all__ = [
    "MetricsReport",
    "Scenario",
    "ScenarioConfig",
    "Simulator",
    "build_scenario",
    "compare",
    "load_config",
    "run",
    "run_with_traces",
]
