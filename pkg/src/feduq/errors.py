"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes, so new failure modes should
reuse an existing class rather than raising bare ValueErrors.
"""


class FeduqError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FeduqError):
    """Tensor or array dimensions incompatible with an operation."""


class ConfigError(FeduqError):
    """Invalid configuration value, flag, or hyperparameter."""


class DomainError(FeduqError):
    """Argument outside a function's mathematical domain."""


class NumericError(FeduqError):
    """Non-finite values or numerically unusable intermediate results."""


class StateError(FeduqError):
    """Operation invoked in an invalid lifecycle state."""


class ProtocolError(FeduqError):
    """Malformed or inconsistent cross-site message."""


class DataError(FeduqError):
    """Dataset violates a documented contract."""


class ParseError(DataError):
    """Ill-formed input file; message names the offending location."""
