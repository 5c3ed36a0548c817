"""Python access to the lktcn forecaster core."""

from ._lktcn import (
    IoError,
    Model,
    ParseError,
    conv1d,
    default_config,
    gelu,
    gradcheck,
    param_count,
)

__all__ = [
    "IoError",
    "Model",
    "ParseError",
    "conv1d",
    "default_config",
    "gelu",
    "gradcheck",
    "param_count",
]
