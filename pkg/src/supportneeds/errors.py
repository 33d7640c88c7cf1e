"""Exception hierarchy shared across the package.

CLI exit-code mapping: ConfigError -> 2, DataFormatError / missing files -> 3,
BackendError / EncoderError -> 4, NumericalError / MetricUndefinedError -> 5.
"""


class SupportNeedsError(Exception):
    """Base class for all package errors."""


class ConfigError(SupportNeedsError):
    """Invalid, unknown, or inconsistent configuration."""


class DataFormatError(SupportNeedsError):
    """Dataset records that violate the on-disk schema or kind invariants."""


class EncoderError(SupportNeedsError):
    """Text encoding failure (empty input, backend fault)."""


class BackendError(SupportNeedsError):
    """External service failure (LLM endpoint, missing credentials)."""


class NumericalError(SupportNeedsError):
    """Non-finite losses or other numerical breakdown during training."""


class MetricUndefinedError(NumericalError):
    """A requested metric has no defined value (e.g. AUC with one class)."""
