"""Exception hierarchy shared by all lpflow modules."""


class LpflowError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(LpflowError):
    """Unknown field family, missing parameter, or malformed config."""


class EscapeError(LpflowError):
    """Orbit left the working box during integration."""

    def __init__(self, message, last_state=None, last_time=None):
        super().__init__(message)
        self.last_state = last_state
        self.last_time = last_time


class StepBudgetError(LpflowError):
    """Integrator exceeded its step budget."""


class SingularityError(LpflowError):
    """Operation undefined because |X| fell below the singularity threshold."""


class DegenerateInputError(LpflowError):
    """Zero vector or otherwise degenerate input to a normalization step."""


class NoCrossingError(LpflowError):
    """No section crossing found in the admissible time window."""


class DegenerateSpectrumError(LpflowError):
    """Spectrum gaps below the grouping tolerance; subspaces unresolved."""


class InsufficientDataError(LpflowError):
    """Window too short for the requested block computation."""


class ClosingFailureError(LpflowError):
    """Newton orbit closing did not converge; candidate rejected."""


class FitFailureError(LpflowError):
    """Time-reparametrization matching window came up empty."""


class NumericalError(LpflowError):
    """Non-finite values or eigensolver failure in a numerical kernel."""
