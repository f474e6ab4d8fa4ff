"""Key-part condensed detection heads: accounting, gradient checks and the toy benchmark."""

from ._kpcondense import (
    ConfigError,
    ContractError,
    DivergenceError,
    IoError,
    count_params_condensed,
    default_config,
    gradcheck,
    preset_names,
    preset_report,
    smooth_l1,
    sweep,
    tmr_squash,
    toy_generate,
    toy_run,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DivergenceError",
    "IoError",
    "count_params_condensed",
    "default_config",
    "gradcheck",
    "preset_names",
    "preset_report",
    "smooth_l1",
    "sweep",
    "tmr_squash",
    "toy_generate",
    "toy_run",
]
