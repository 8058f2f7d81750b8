"""Exception hierarchy shared by all pipeline modules.

The CLI maps these onto stable exit codes: ConfigError -> 1,
DataError -> 2, NumericError -> 3.
"""


class PipelineError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(PipelineError):
    """Invalid configuration, argument, or parameter value."""


class DataError(PipelineError):
    """Malformed, missing, or inconsistent input data."""


class NumericError(PipelineError):
    """Numerical failure (divergence, non-finite values)."""
