"""Exception hierarchy for jddiag.

All library-specific failures derive from :class:`JddiagError` so callers can
catch everything from this package in one clause.  ``ValueError`` is reserved
for plain caller bugs (wrong shapes, non-finite input).
"""

__all__ = [
    "JddiagError",
    "SingularMatrixError",
    "SingularShiftError",
    "EmptySpanError",
    "NotOrthonormalError",
    "NoConvergenceError",
    "NotAnEigenvalueError",
    "InconsistentError",
    "NotUniqueError",
    "PathMismatchError",
    "ZeroVectorError",
    "SingularWitnessError",
    "BiorthBreakdownError",
    "MaxIterationsError",
    "FallbackExhaustedError",
]


class JddiagError(Exception):
    """Base class for all jddiag errors."""


class SingularMatrixError(JddiagError):
    """A direct solve hit a pivot below the rank tolerance."""


class SingularShiftError(JddiagError):
    """The shifted operator A - shift*I is numerically singular.

    This signals that the shift is (numerically) an eigenvalue of A, which
    the solvability classification assumes away.
    """


class EmptySpanError(JddiagError):
    """Orthonormalization dropped every column."""


class NotOrthonormalError(JddiagError):
    """A basis argument fails its orthonormality contract."""


class NoConvergenceError(JddiagError):
    """The dense eigenvalue iteration did not converge."""


class NotAnEigenvalueError(JddiagError):
    """The given scalar is not (numerically) an eigenvalue of the matrix."""


class InconsistentError(JddiagError):
    """The projected linear system has no solution."""


class NotUniqueError(JddiagError):
    """The projected linear system has infinitely many solutions."""


class PathMismatchError(JddiagError):
    """Two independent solution paths disagree beyond tolerance.

    Raised as a diagnostic failure: it means the solver's internal
    cross-check caught an inconsistency, not that the input is bad.
    """


class ZeroVectorError(JddiagError):
    """A vector argument that must be nonzero is (numerically) zero."""


class SingularWitnessError(JddiagError):
    """The witness matrix of a subspace test is singular where the
    predicate needs its inverse."""


class BiorthBreakdownError(JddiagError):
    """A left/right vector pair is numerically orthogonal, so the
    bi-orthonormal normalization q^H p = 1 cannot be performed."""


class MaxIterationsError(JddiagError):
    """The outer iteration hit its iteration cap.

    Carries the partial result so callers can still inspect the trace.
    """

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


class FallbackExhaustedError(JddiagError):
    """The residual-expansion fallback vector also lies in the current
    search subspace; the basis cannot grow."""

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result
