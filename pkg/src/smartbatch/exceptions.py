"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ``ConfigError`` -> 1, ``DataError`` -> 2,
``InvariantError`` -> 3.
"""


class SmartBatchError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SmartBatchError, ValueError):
    """Bad parameters or configuration (usage-level error)."""


class DataError(SmartBatchError, ValueError):
    """Input data is malformed, inconsistent or incompatible."""


class InvariantError(SmartBatchError, AssertionError):
    """An internal invariant did not hold. Always a bug or corrupted artifact."""
