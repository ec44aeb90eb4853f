"""Deterministic closed-loop simulator for camera-based on-orbit inspection:
switched memory-regression distance observation, dwell-time-certified feature
chaining, and barrier-robustified information-maximizing LQR guidance."""

from .config import ScenarioConfig, load_config
from .simulate import RunResult, run_scenario

__version__ = "1.0.0"

__all__ = ["ScenarioConfig", "load_config", "RunResult", "run_scenario", "__version__"]
