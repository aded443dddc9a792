"""Exception types shared across the package."""


class OrthoconvError(Exception):
    """Base class for all package errors."""


class DataError(OrthoconvError, ValueError):
    """Input contains non-finite values or is otherwise malformed."""


class ShapeError(OrthoconvError, ValueError):
    """Operand shapes are incompatible."""


class PreconditionError(OrthoconvError, ValueError):
    """A documented precondition of an operation does not hold."""


class InvalidKernelError(OrthoconvError, ValueError):
    """A kernel expected to be orthogonal is not (within tolerance)."""


class NonDifferentiableError(OrthoconvError, ValueError):
    """Finite differences were requested at a non-smooth point."""


class FormatError(OrthoconvError, ValueError):
    """A serialized file does not match its declared format."""


class DivergenceError(OrthoconvError, RuntimeError):
    """An optimization run blew up; the partial trajectory is attached."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class RankDeficiencyWarning(UserWarning):
    """A factor matrix was numerically rank deficient."""


class ConvergenceWarning(UserWarning):
    """An iterative estimate had not settled at the final iteration."""


class SignatureWarning(UserWarning):
    """A rank-based invariant sits close to the rank threshold."""
