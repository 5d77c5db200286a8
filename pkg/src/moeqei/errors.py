"""Exception types raised across the package."""


class MoeQeiError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(MoeQeiError, ValueError):
    pass


class NotPositiveDefinite(MoeQeiError, ArithmeticError):
    pass


class SingularFactor(MoeQeiError, ArithmeticError):
    pass


class InsufficientData(MoeQeiError, ValueError):
    pass


class NonPositiveSigma(MoeQeiError, ValueError):
    pass


class UnsupportedDimension(MoeQeiError, ValueError):
    pass


class RepairFailed(MoeQeiError, RuntimeError):
    """Separation repair could not place the batch; ``r`` is too large for the box."""


class UnsupportedPending(MoeQeiError, ValueError):
    pass


class OutOfBounds(MoeQeiError, ValueError):
    pass
