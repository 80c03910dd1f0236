"""Exception hierarchy shared by every module.

Each error carries a stable ``code`` so the command line layer can map it to
an exit status and a machine-readable payload.
"""


class IonLadderError(Exception):
    code = "compute_error"


class ConfigError(IonLadderError):
    code = "config_error"


class ComputeError(IonLadderError):
    code = "compute_error"


# crystal
class NonConvergence(ComputeError):
    code = "non_convergence"


class UnstableTrap(ComputeError):
    code = "unstable_trap"


class AmbiguousStructure(ComputeError):
    code = "ambiguous_structure"


class BracketFailure(ComputeError):
    code = "bracket_failure"


# phonons
class ImaginaryFrequency(ComputeError):
    code = "imaginary_frequency"


# couplings
class ResonantMode(ComputeError):
    code = "resonant_mode"


class ZeroBond(ComputeError):
    code = "zero_bond"


class EmptyModel(ComputeError):
    code = "empty_model"


# dynamics and master equations
class DimensionOverflow(ComputeError):
    code = "dimension_overflow"


class StepRejection(ComputeError):
    code = "step_rejection"


class PositivityLoss(ComputeError):
    code = "positivity_loss"


# exact diagonalization
class InvalidRange(ComputeError):
    code = "invalid_range"


class NoConvergence(ComputeError):
    code = "no_convergence"


class SizeLimit(ComputeError):
    code = "size_limit"


class FitDegenerate(ComputeError):
    code = "fit_degenerate"

    def __init__(self, message, fits=None):
        super().__init__(message)
        self.fits = fits or {}


# error budget
class RegimeViolation(ComputeError):
    code = "regime_violation"


class TruncationNotConverged(ComputeError):
    code = "truncation_not_converged"
