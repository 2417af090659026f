"""Exception types raised by fraceuler."""


class FracEulerError(Exception):
    """Base class for all package errors."""


class DomainError(FracEulerError, ValueError):
    """A parameter lies outside the region where a quantity is defined."""


class DivisibilityError(FracEulerError, ValueError):
    pass


class DimensionMismatchError(FracEulerError, ValueError):
    pass


class FactorizationError(FracEulerError, ArithmeticError):
    """Cholesky factorization of the fBm covariance failed."""


class EmbeddingError(FracEulerError, ArithmeticError):
    """The circulant embedding has a significantly negative eigenvalue."""


class SingularMatrixError(FracEulerError, ArithmeticError):
    pass


class QuadratureError(FracEulerError, ArithmeticError):
    """Two successive quadrature refinements disagree beyond tolerance."""


class ToleranceNotMetError(FracEulerError, ArithmeticError):
    pass


class SubgridMissingError(FracEulerError, ValueError):
    """An off-diagonal block integral was requested on a path without a fine subgrid."""


class OracleUnavailableError(FracEulerError, ValueError):
    pass


class ConsistencyError(FracEulerError, ValueError):
    """User-supplied derivative fields disagree with the coefficients."""


class ConfigError(FracEulerError, ValueError):
    """Invalid experiment configuration (parse or validation failure)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NegativeRadicandError(FracEulerError, ArithmeticError):
    """``Q - R`` is negative beyond tolerance, so the matrix noise cannot be built."""


class DegenerateInputError(FracEulerError, ValueError):
    pass
