"""Configuration, experiment runner, plots and command line interface."""

from .config import ConfigError, ExperimentConfig, format_config, load_config, parse_config
from .experiment import ResultTable, run_experiment, run_oracles, sweep

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ResultTable",
    "format_config",
    "load_config",
    "parse_config",
    "run_experiment",
    "run_oracles",
    "sweep",
]
