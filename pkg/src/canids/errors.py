"""Exception hierarchy shared by all pipeline stages.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class CanidsError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(CanidsError):
    """Invalid configuration: bad flags, malformed config files, impossible shapes."""


class DataError(CanidsError):
    """Invalid data: malformed traces, unknown IDs, misaligned reports."""


class NumericError(CanidsError):
    """Numeric failure: NaN/Inf in parameters, states, or losses."""
