"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class DomainError(ValueError):
    """Input lies outside an operation's mathematical domain (e.g. log of 0)."""


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf from finite inputs."""


class CholeskyError(RuntimeError):
    """Factorization failed even after the one-shot diagonal jitter.

    Carries enough context to diagnose the offending matrix.
    """

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss; ``step`` records when."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class ConfigError(ValueError):
    """Malformed config file, unknown key, or invalid field value."""
