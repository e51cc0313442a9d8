"""Simulation of UWB-localized drone swarms with drone-deployed anchors."""

from .config import ScenarioKind, SwarmConfig, load_config
from .scenarios import ExperimentLog, run_scenario

__all__ = ["ScenarioKind", "SwarmConfig", "load_config", "ExperimentLog", "run_scenario"]
__version__ = "0.1.0"
