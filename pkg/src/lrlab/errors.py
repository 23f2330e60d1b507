"""Exception types shared across the package.

Every contract violation raises a named error; nothing is silently repaired.
Helpers that *can* fix an input (normalizing a direction, projecting a
frequency onto a slice plane) exist as explicit functions next to the types
they serve.
"""


class LrlabError(Exception):
    """Base class for all package errors."""


class GridMismatch(LrlabError):
    """Fields or data attached to different grids were combined."""


class SupportViolation(LrlabError):
    """A field does not vanish where compact support is required."""


class CflViolation(LrlabError):
    """Time step too large for the explicit scheme on this grid."""


class NonfiniteState(LrlabError):
    """The evolving solution produced NaN or Inf values."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite values at time step {step}")


class PreconditionViolation(LrlabError):
    """Input data fails a documented precondition of the operation."""


class SliceViolation(LrlabError):
    """A frequency vector is not orthogonal to the characteristic direction."""


class NotSpaceLike(LrlabError):
    """A frequency tagged space-like violates |tau| < |xi|."""


class IllConditioned(LrlabError):
    """A linear solve exceeded the conditioning threshold."""


class InsufficientDirections(LrlabError):
    """No admissible direction family exists for the requested frequency."""


class NotClosed(LrlabError):
    """A 1-form fails the closedness residual bound required for integration."""


class OriginInsideSupport(LrlabError):
    """The path origin for potential integration lies inside the field support."""


class EmptyCone(LrlabError):
    """A spectral lattice contains no admissible frequencies."""


class ConfigInvalid(LrlabError):
    """An experiment configuration failed validation.

    ``path`` names the offending field with dotted-path notation.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"config field '{path}': {message}")


class AssertionFailed(LrlabError):
    """A scenario's declared assertion failed.

    Carries the invariant name and the values that broke it.
    """

    def __init__(self, name: str, values: dict):
        self.name = name
        self.values = dict(values)
        detail = ", ".join(f"{k}={v}" for k, v in self.values.items())
        super().__init__(f"assertion '{name}' failed: {detail}")


class MissingReport(LrlabError):
    """An export was asked for a report directory without the expected files."""


class NonConvergence(UserWarning):
    """Iterative reconstruction stopped at max_iter without meeting tol.

    Issued as a warning: the partial result is still returned, flagged.
    """
