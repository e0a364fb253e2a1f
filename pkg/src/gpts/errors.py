"""Exception types shared across the toolkit."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class NumericalError(RuntimeError):
    """A linear-algebra operation failed beyond recovery (e.g. Cholesky
    after jitter escalation)."""


class ConfigError(ValueError):
    """An experiment configuration is invalid."""


class DataError(RuntimeError):
    """An on-disk artifact (CSV log, config file) is missing or malformed."""


class EnvironmentFailure(RuntimeError):
    """A training environment failed mid-run."""


class BridgeError(RuntimeError):
    """Transport-level failure talking to an external trainer."""


class ProtocolError(BridgeError):
    """The external trainer violated the wire protocol."""
