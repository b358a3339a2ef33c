"""Rotation-equivariant convolutional networks over planar cyclic groups.

Pure numpy forward/backward with a small reverse-mode tape, an optional
compiled backend for the conv patch kernels, and a measurement harness
(equivariance error, downsampling strictness, synthetic data, training,
rotation robustness) behind the ``rotequiv`` command line tool.
"""

__version__ = "0.1.0"

from .group import CyclicGroup
from .model import (
    ConfigError,
    HeadConfig,
    Model,
    NetworkConfig,
    StageConfig,
    apply_overrides,
    build,
    config_from_text,
    config_to_text,
    default_config,
    layer_plan,
    load_checkpoint,
    load_config,
    save_checkpoint,
    set_all_downsample,
)

__all__ = [
    "__version__",
    "CyclicGroup",
    "ConfigError",
    "HeadConfig",
    "Model",
    "NetworkConfig",
    "StageConfig",
    "apply_overrides",
    "build",
    "config_from_text",
    "config_to_text",
    "default_config",
    "layer_plan",
    "load_checkpoint",
    "load_config",
    "save_checkpoint",
    "set_all_downsample",
]
