"""Exception types shared across the package."""


class MagshellError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(MagshellError, ValueError):
    pass


class Unsupported(MagshellError):
    """The requested operation has no implementation for this system."""


class InvalidForm(MagshellError, ValueError):
    """A one-form tag was paired with a system it does not live on."""


class PreconditionFailed(MagshellError):
    """Inputs fall outside the range where a certificate is available."""


class NotStable(MagshellError):
    """No stabilizing one-form exists at the requested energy."""


class NoConvergence(MagshellError):
    pass


class EscapedShell(MagshellError):
    """A loop drifted away from the energy level during a solve."""


class VerificationFailure(MagshellError):
    """A numerical certificate did not pass its tolerance."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst


class StepRejected(MagshellError):
    """An integrator step produced a non-finite or out-of-chart state."""
