"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/usage problems exit 1,
data problems exit 2, numerical failures exit 3.
"""


class MixcastError(Exception):
    """Base class for all package errors."""


class DimensionError(MixcastError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ConfigError(MixcastError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class DataError(MixcastError):
    """Problem with an input dataset (parsing, schema, NaN cells)."""


class InsufficientDataError(DataError):
    """A segment is too short for the requested window geometry."""


class NumericalError(MixcastError, RuntimeError):
    """Non-finite values produced during computation."""


class StateError(MixcastError, RuntimeError):
    """Optimizer or parameter bookkeeping is inconsistent."""


class HarnessError(MixcastError, RuntimeError):
    """The gradient-check harness detected a broken precondition."""


class WeightFormatError(MixcastError):
    """A weight file failed validation on load."""
