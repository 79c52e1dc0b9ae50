"""Exception types shared across the package; the CLI maps them to exit codes."""


class AveqxError(Exception):
    pass


class ConfigError(AveqxError, ValueError):
    """Invalid experiment or command configuration (usage error)."""


class DataError(AveqxError, ValueError):
    """Malformed or inconsistent input data."""


class TrainingDiverged(AveqxError, RuntimeError):
    """Loss became non-finite during training."""
