# Import the necessary functions from individual modules
from .config_parsing import ConfigError, ExperimentConfig, apply_overrides, load_config, serialize_config
from .experiments import RunRecord, cli_oracle_check, cli_sweep, cli_train


# when using `from api import *`
__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunRecord",
    "apply_overrides",
    "cli_oracle_check",
    "cli_sweep",
    "cli_train",
    "load_config",
    "serialize_config",
]
