"""Shared exception types, mapped to CLI exit codes in cli.main."""


class ShapeError(ValueError):
    """Tensor shape does not match a layer or parameter contract."""


class ConfigError(ValueError):
    """Invalid or unknown configuration (exit code 2)."""


class DataError(ValueError):
    """Missing, corrupt, or contract-violating data (exit code 3)."""


class NumericsError(ArithmeticError):
    """Non-finite value detected during training (exit code 4)."""


class CheckpointError(DataError):
    """Checkpoint file rejected (bad magic, version, or structure)."""
