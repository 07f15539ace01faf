"""Exception hierarchy shared by the pipeline modules.

The CLI maps each class to a distinct exit code.
"""


class TrialCausalError(Exception):
    """Base class for all package errors."""


class ConfigError(TrialCausalError, ValueError):
    """Invalid configuration, knowledge or specification document."""


class DataError(TrialCausalError, ValueError):
    """Input data cannot support the requested computation."""


class ConvergenceError(TrialCausalError, RuntimeError):
    """A numerical optimizer failed to converge."""
