"""Error types shared across the package.

Each class carries the process exit code the command line tool maps it to.
"""


class CedaError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 3


class ConfigError(CedaError):
    """Bad or inconsistent configuration (exit code 1)."""

    exit_code = 1


class DataError(CedaError):
    """Unusable input data (exit code 2)."""

    exit_code = 2


class ComputationError(CedaError):
    """A computation could not be completed (exit code 3)."""

    exit_code = 3
