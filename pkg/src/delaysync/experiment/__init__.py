from .config import ConfigError, ExperimentConfig, load_config, parse_config, serialize_config
from .runner import ExperimentResult, emit_plot_data, load_traces, run_experiment

__all__ = [
    "ConfigError", "ExperimentConfig", "ExperimentResult", "emit_plot_data", "load_config",
    "load_traces", "parse_config", "run_experiment", "serialize_config",
]
