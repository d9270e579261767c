"""Exception hierarchy shared by all solvers and the command line."""


class PCGLassoError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(PCGLassoError, ValueError):
    """Input data or matrix violates a precondition (non-PD, zero variance, bad shape)."""


class ConfigurationError(PCGLassoError, ValueError):
    """Tuning parameters or solver options are out of range."""


class NumericalError(PCGLassoError, ArithmeticError):
    """A diagnostic quantity could not be computed (e.g. negative value under a root)."""
