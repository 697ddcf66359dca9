"""Exception hierarchy shared across the package."""


class AppexError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(AppexError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class NumericError(AppexError, ArithmeticError):
    """A numerical routine failed (eigensolver, non-finite result)."""


class SingularMatrixError(NumericError):
    """A matrix that must be inverted is singular to working precision."""


class RankDeficiencyError(SingularMatrixError):
    """The pooled second-moment matrix of the states is not invertible.

    This happens when the observed states live in a strict subspace of R^d,
    e.g. when the initial distribution does not span the state space.
    """


class ExactEstimatorError(NumericError):
    """The exact 1-D estimator is inapplicable (non-positive log argument)."""


class GenerationError(AppexError, RuntimeError):
    """A rejection sampler exhausted its attempt budget."""


class DivergenceError(NumericError):
    """A simulated state became non-finite."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at Euler-Maruyama step {step}")


class AlignmentError(AppexError, ValueError):
    """Observation times do not fall on the trajectory grid."""


class ConvergenceError(NumericError):
    """Sinkhorn stopped at max_iter with a marginal violation above 10 * tol."""

    def __init__(self, residual, n_iter, message=None, iteration=None, pair=None):
        self.residual = residual
        self.n_iter = n_iter
        self.iteration = iteration
        self.pair = pair
        if message is None:
            message = f"Sinkhorn did not converge after {n_iter} iterations (residual {residual:.3e})"
        super().__init__(message)


class DegenerateCouplingError(AppexError, ValueError):
    """A coupling row carries no mass, so its conditional law is undefined."""


class DataFormatError(AppexError, ValueError):
    """An input file does not follow the documented layout.

    ``column`` names the offending column when one is missing.
    """

    def __init__(self, message, column=None):
        self.column = column
        super().__init__(message)
