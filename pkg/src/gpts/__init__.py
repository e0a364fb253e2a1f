"""Gaussian-process Thompson sampling for online tuning of training
hyperparameters: exact GP regression, the loss-delta bandit, desk-scale
training environments, an external-trainer bridge, and an experiment
harness."""

from . import bandit, bridge, environments, gp, harness
from .errors import (
    BridgeError,
    ConfigError,
    DataError,
    EnvironmentFailure,
    InvalidArgumentError,
    NumericalError,
    ProtocolError,
)

__all__ = [
    "bandit",
    "bridge",
    "environments",
    "gp",
    "harness",
    "BridgeError",
    "ConfigError",
    "DataError",
    "EnvironmentFailure",
    "InvalidArgumentError",
    "NumericalError",
    "ProtocolError",
]

__version__ = "0.1.0"
