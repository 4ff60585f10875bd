"""Exception hierarchy.

The CLI maps each family onto an exit code: configuration problems exit 2,
bad input data exits 3 and numerical failures exit 4.
"""


class UVCLError(Exception):
    """Base class for all package errors."""


class ConfigError(UVCLError, ValueError):
    """Invalid configuration or precondition on user-supplied parameters."""


class DataError(UVCLError, ValueError):
    """Malformed, inconsistent or missing input data."""


class FeatureFileError(DataError):
    """A feature file could not be parsed."""


class NumericalError(UVCLError, ArithmeticError):
    """A numerical routine could not produce a finite result."""


class IsolatedSeedError(NumericalError):
    """Every kernel weight underflowed to zero for a mean-shift seed."""


class Theta1UndefinedError(UVCLError):
    """The distance threshold needs at least two clusters."""
