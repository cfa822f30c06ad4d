"""Exception hierarchy shared by all modules."""


class MagstepError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(MagstepError, ValueError):
    """Invalid parameters, grids, or configuration."""


class SolverError(MagstepError, RuntimeError):
    """A numerical solver failed to produce an answer."""


class ConvergenceError(SolverError):
    """Iteration cap reached without meeting the tolerance.

    ``index`` identifies the offending eigenpair (if any) and ``residuals``
    carries the best residual norms achieved.
    """

    def __init__(self, message, index=None, residuals=None):
        super().__init__(message)
        self.index = index
        self.residuals = residuals


class IndefiniteMatrixError(SolverError):
    """Conjugate gradients met a direction of nonpositive curvature."""


class BracketError(SolverError):
    """A root or minimum could not be bracketed."""


class OracleSizeError(ValidationError):
    """Dense oracle refused a matrix above its size cap."""
