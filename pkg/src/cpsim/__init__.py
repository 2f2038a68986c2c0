"""Discrete-event simulator of collective perception with multi-hop forwarding in an urban VANET."""

from .config import ConfigError, ScenarioConfig, load_config
from .engine import run
from .metrics import RunResult, summarize

__all__ = ["ConfigError", "ScenarioConfig", "RunResult", "load_config", "run", "summarize"]
__version__ = "0.1.0"
