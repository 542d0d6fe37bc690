"""Exception hierarchy shared by the samplers, oracles and CLI."""


class MFSamplerError(Exception):
    """Base class for all package errors."""


class InvalidArgument(MFSamplerError, ValueError):
    """An argument has the wrong shape, range or value."""


class InvalidSpec(MFSamplerError, ValueError):
    """A problem definition is malformed (e.g. a covariance is not SPD)."""


class NotPSDError(MFSamplerError, ValueError):
    """A matrix expected to be positive semidefinite has a negative eigenvalue."""


class SolveFailure(MFSamplerError, ArithmeticError):
    """A symmetric positive-definite solve could not be carried out."""


class DivergenceError(MFSamplerError, ArithmeticError):
    """A particle left the finite range during a run.

    Attributes
    ----------
    step : int or None
        Step index (Kalman samplers) at which the blow-up was detected.
    time : float or None
        System time (kinetic samplers) at which the blow-up was detected.
    """

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class GridTooSmall(MFSamplerError, ValueError):
    """The quadrature grid misses probability mass of the target."""


class InvalidConfiguration(MFSamplerError, ValueError):
    """A run configuration is inconsistent (raised before any work is done)."""


class UnsupportedConfiguration(InvalidConfiguration):
    """The configuration is valid but not supported by the requested experiment."""
