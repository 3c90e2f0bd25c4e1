"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class ProtoselError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ProtoselError):
    """Invalid or inconsistent run configuration."""


class DataError(ProtoselError):
    """Problem with input data (files or in-memory datasets)."""


class ParseError(DataError):
    """Malformed input file; message carries the offending line number."""


class ValidationError(DataError):
    """Input violates a documented precondition or invariant."""


class DegenerateDataError(DataError):
    """Data is degenerate for the requested operation (e.g. all points equal)."""


class NumericError(ProtoselError):
    """Numeric breakdown inside an algorithm (non-finite values, failed solve)."""
