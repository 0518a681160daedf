"""Deterministic chunk-delivery simulator."""
from .config import ConfigError, SimConfig, config_from_dict, load_config
from .session import SessionResult, simulate, simulate_session, write_outputs

__all__ = [
    "ConfigError",
    "SessionResult",
    "SimConfig",
    "config_from_dict",
    "load_config",
    "simulate",
    "simulate_session",
    "write_outputs",
]
