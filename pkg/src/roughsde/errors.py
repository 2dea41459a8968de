"""Exception hierarchy shared by all modules."""


class RoughSDEError(Exception):
    """Base class for library errors."""


class DomainError(RoughSDEError, ValueError):
    """An argument lies outside the domain of an operation."""


class GenerationError(RoughSDEError):
    """Exact fBm sampling failed (embedding and Cholesky both unusable)."""


class CapabilityError(RoughSDEError):
    """A vector field lacks a derivative needed by the requested operation."""


class NumericError(RoughSDEError, ArithmeticError):
    """Non-finite state or increment encountered."""


class DivergenceError(NumericError):
    """Scheme state exceeded the overflow guard."""

    def __init__(self, step: int, norm: float, guard: float):
        self.step = step
        self.norm = norm
        super().__init__(f"state norm {norm:.3e} exceeds guard {guard:.0e} at step {step}")


class IllConditionedError(NumericError):
    """Linearized flow matrix too ill-conditioned to invert reliably."""


class RegressionError(DomainError):
    """Not enough (or invalid) points for a log-log rate fit."""


class ConfigError(RoughSDEError):
    """Invalid experiment configuration or unknown registry name."""


class ExperimentError(RoughSDEError):
    """A Monte Carlo experiment could not produce a valid estimate."""
