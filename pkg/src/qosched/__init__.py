"""TTI-level downlink scheduling simulator with PF, CQA and actor-critic schedulers."""
from .domain import ConfigError, ScenarioConfig, load_config, validate_config
from .engine import RunResult, Simulation, run, train_and_evaluate
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "ConfigError", "RunResult", "ScenarioConfig", "Simulation", "load_config",
           "run", "train_and_evaluate", "validate_config", "__version__"]
