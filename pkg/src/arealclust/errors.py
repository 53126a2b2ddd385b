"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration errors exit with 2,
data errors with 3 and numerical failures with 4.
"""

__all__ = ["ConfigError", "DataError", "NumericalError"]


class ConfigError(ValueError):
    """Invalid configuration: dimensions, hyperparameters, run settings."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(RuntimeError):
    """A numerical operation failed (non-positive-definite matrix, overflow)."""
