"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, exhausted iteration/step budgets with 3, and numerical failures
(non-convergence, positivity loss, blow-up, degenerate statistics) with 4.
"""


class ScalebridgeError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(ScalebridgeError, ValueError):
    """Bad parameters or malformed configuration (CLI exit code 2)."""


class BudgetExceededError(ScalebridgeError, RuntimeError):
    """An iteration or step budget was exhausted (CLI exit code 3)."""


class NumericalError(ScalebridgeError, RuntimeError):
    """Base class for runtime numerical failures (CLI exit code 4)."""


class ConvergenceError(NumericalError):
    """An iterative solver failed to reach its tolerance within its cap."""


class ResolutionError(NumericalError):
    """A discretization could not resolve mass to the requested tolerance."""


class VerificationError(NumericalError):
    """A self-check (interpolant verification, certificate) failed."""


class StepRejectionError(NumericalError):
    """An integrator left the certified domain of its coefficients."""


class BlowUpError(NumericalError):
    """A trajectory left the admissible range of the model."""


class PositivityError(NumericalError):
    """Energy positivity could not be maintained after maximal step halving."""


class DegenerateVarianceError(NumericalError):
    """Theoretical variance is zero while the ensemble shows real spread."""


class WindowTooShortError(NumericalError):
    """Too few usable lags above the noise floor for a decay fit."""


class NoSinksError(NumericalError):
    """The averaged drift has no stable zero to organize statistics around."""


class AsymmetryError(NumericalError):
    """An antisymmetry/symmetry check on constructed coefficients failed."""


class InsufficientSampleError(ScalebridgeError, ValueError):
    """Not enough data to run the requested statistical procedure."""
