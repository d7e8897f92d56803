"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes (validation -> 2, remote -> 3,
numerical -> 4), so new exception types should subclass one of the
three branches below.
"""


class PosteriorLensError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(PosteriorLensError, ValueError):
    """Invalid configuration, arguments, or input data."""


class NumericalError(PosteriorLensError, ArithmeticError):
    """A numerical procedure failed or produced unusable values."""


class InstabilityError(NumericalError):
    """A derivative/moment estimate is outside its plausibility tolerance.

    Usually cured by a different finite-difference step.
    """


class InfeasibleMomentsError(NumericalError):
    """The requested moment vector cannot belong to any distribution."""


class MaxentConvergenceError(NumericalError):
    """Dual Newton iteration did not converge.

    Carries the best iterate found so far.
    """

    def __init__(self, message, coefficients=None, residual=None):
        super().__init__(message)
        self.coefficients = coefficients
        self.residual = residual


class SubspaceIterationError(NumericalError):
    """Subspace iteration could not maintain a full-rank basis."""


class RemoteError(PosteriorLensError):
    """Failure talking to an external denoiser service."""


class RemoteTimeoutError(RemoteError):
    """Request timed out. Safe to retry at the caller's discretion."""


class ProtocolMismatchError(RemoteError):
    """The remote speaks an incompatible protocol version."""


class WireDecodeError(RemoteError):
    """A payload could not be decoded bit-exactly."""
