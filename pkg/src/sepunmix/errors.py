"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """A parameter left its feasible domain."""


class ShapeError(ValueError):
    """Dimensions of the supplied arrays do not agree."""


class DegeneracyError(RuntimeError):
    """A dictionary lost full column rank (numerically)."""


class InvariantViolation(ValueError):
    """An input violates a documented invariant (e.g. negative spectral constants)."""


class PackingInfeasibleError(RuntimeError):
    """Rejection sampling could not place all spikes at the requested separation."""

    def __init__(self, message: str, placed: int = 0):
        super().__init__(message)
        self.placed = placed


class CoverageError(RuntimeError):
    """All Monte Carlo proposals at some radius fell outside the feasible box."""


class ConfigError(ValueError):
    """An experiment configuration is inconsistent or incomplete."""
