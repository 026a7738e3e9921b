"""Exception hierarchy shared by every module of the package."""


class OjaError(Exception):
    """Base class for all errors raised by :mod:`ojasub`."""


class ShapeMismatch(OjaError, ValueError):
    pass


class NonFinite(OjaError, ValueError):
    pass


class RankDeficient(OjaError):
    pass


class NotOrthonormal(OjaError):
    pass


class NoConvergence(OjaError):
    pass


class Overflow(OjaError, ArithmeticError):
    pass


class SingularSolve(OjaError):
    pass


class Diverged(OjaError):
    """The integrated frame left every bounded neighbourhood of the manifold.

    The partially integrated trace is attached as ``trace`` so callers can
    still inspect (or plot) the diverging residual series.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class GapTooSmall(OjaError):
    pass


class ConjugatePairSplit(OjaError):
    pass


class NotInvariant(OjaError):
    pass


class BlockAmbiguity(OjaError):
    pass


class IllConditionedCoupling(OjaError):
    pass


class NearPole(OjaError):
    def __init__(self, message, pole=None):
        super().__init__(message)
        self.pole = pole


class NotHurwitz(OjaError):
    pass


class NotStabilizable(OjaError):
    pass


class DesignFailed(OjaError):
    def __init__(self, message, abscissa=None):
        super().__init__(message)
        self.abscissa = abscissa


class MissingGain(OjaError):
    pass


class WeakTimescaleSeparation(UserWarning):
    """Slow and fast eigenvalues are not separated by the requested ratio."""


class UnvalidatedEigenvalues(UserWarning):
    """Projected eigenvalues are not expected to match eigenvalues of A."""


class TooLarge(OjaError, ValueError):
    """The matrix exceeds the dense size limit of the desk-scale oracles."""
