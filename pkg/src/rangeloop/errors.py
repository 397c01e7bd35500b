"""Exception types shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, numeric 4);
everything else is an ordinary bug and surfaces as a plain exception.
"""


class RangeloopError(Exception):
    """Base class for all package-specific errors."""

    exit_code = 1


class ConfigurationError(RangeloopError):
    """Invalid configuration value or inconsistent option combination."""

    exit_code = 2


class DataError(RangeloopError):
    """Malformed, missing, or out-of-contract input data."""

    exit_code = 3


class NumericError(RangeloopError):
    """Non-finite loss or other numeric failure during optimization."""

    exit_code = 4
