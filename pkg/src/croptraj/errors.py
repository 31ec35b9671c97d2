"""Exception types shared across the package."""


class CropTrajError(Exception):
    """Base class for all package errors."""


class ValidationError(CropTrajError):
    """A record or feature set violates its invariants."""


class ParseError(CropTrajError):
    """A byte stream could not be parsed. Carries the failing offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConfigError(CropTrajError):
    """Invalid configuration or arguments."""


class DataError(CropTrajError):
    """Input data is unusable (empty, missing labels, all tracks skipped)."""


class NumericError(CropTrajError):
    """A numerical failure: non-finite values, covariance collapse."""


class OutOfSupportError(NumericError):
    """A query point lies so far outside a mixture that all component
    densities underflow."""
