"""Exception types shared across the package."""


class CsForestError(Exception):
    """Base class for all package errors."""


class ConfigError(CsForestError):
    """Invalid configuration, parameters, or usage."""


class DataError(CsForestError):
    """Invalid or inconsistent data."""


class ParseError(DataError):
    """Malformed input file; message names the offending line."""
