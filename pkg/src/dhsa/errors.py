"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
CapacityError -> 4.
"""


class DhsaError(Exception):
    """Base class for all package errors."""


class ConfigError(DhsaError, ValueError):
    """Invalid parameters, mismatched sketches, or bad configuration."""


class DataError(DhsaError):
    """Malformed trace or snapshot input."""


class CapacityError(DhsaError):
    """A candidate buffer exceeded its configured capacity during restore."""


class SealedWindowError(DhsaError, RuntimeError):
    """An update was fed to a window that has already been sealed."""
