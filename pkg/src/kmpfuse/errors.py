"""Exception taxonomy shared by every layer of the toolkit.

The CLI maps these onto process exit codes (usage -> 1, data -> 2,
numerics -> 3); the HTTP service maps them onto status codes.
"""

from __future__ import annotations


class KmpFuseError(Exception):
    """Base class for all toolkit errors."""


class UsageError(KmpFuseError):
    """Bad command-line invocation or configuration value."""


class ConfigurationError(UsageError):
    """A configuration object violates its own contract."""


class DataError(KmpFuseError):
    """Input data is malformed, non-finite, or otherwise unusable."""


class SchemaError(DataError):
    """A corpus or payload document does not match the documented schema."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DimensionMismatchError(DataError):
    """Arrays that must share dimensions do not."""


class NumericalError(KmpFuseError):
    """A numerical routine could not complete (conditioning, divergence...)."""


class ConditioningError(NumericalError):
    """A matrix factorization failed even at the maximum jitter level."""

    def __init__(self, matrix: str, jitter: float):
        self.matrix = matrix
        self.jitter = jitter
        super().__init__(
            f"factorization of {matrix} failed even with jitter {jitter:g}"
        )


class UnsupportedProjectionError(UsageError):
    """Field export requested for a position dimension other than 2."""
