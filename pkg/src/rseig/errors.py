"""Exception types shared across the package."""


class RSEigError(Exception):
    """Base class for all package errors."""


class NotFound(RSEigError):
    """Unknown name (builtin instance lookup)."""


class InvalidArgument(RSEigError):
    """Precondition violation on a public operation."""


class EvaluationError(RSEigError):
    """A model field produced a non-finite value at a grid node."""


class NonMonotoneScheme(RSEigError):
    """Cross-derivative terms too large for the monotone 7-point splitting."""


class EllipticityError(RSEigError):
    """Diffusion matrix degenerate on some axis at some node."""


class ConvergenceError(RSEigError):
    """Iteration cap reached. Carries the last iterate when available."""

    def __init__(self, message, last_iterate=None, policy_cycle=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.policy_cycle = policy_cycle


class NotIrreducible(RSEigError):
    """Stationary solve failed: chain is not irreducible (or not conservative)."""


class RangeError(RSEigError):
    """A required value falls outside a configured grid range."""


class ExtrapolationError(RSEigError):
    """A simulated path left the hull of the interpolation grid."""


class DivergenceError(RSEigError):
    """A simulated path blew up."""
