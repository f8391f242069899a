"""Exception hierarchy shared by all modules.

Every error raised on purpose derives from :class:`RKSmoothError`, so the CLI
can turn any of them into a single machine-readable error line.
"""


class RKSmoothError(Exception):
    """Base class for every error raised by this package."""

    code = "error"


class InfeasibleParameterError(RKSmoothError, ValueError):
    code = "infeasible-parameter"


class NumericalBlowupError(RKSmoothError, ArithmeticError):
    code = "numerical-blowup"


class UnknownMethodError(RKSmoothError, KeyError):
    code = "unknown-method"

    def __str__(self):
        # KeyError quotes its argument; keep the message readable
        return str(self.args[0]) if self.args else ""


class InvalidTableauError(RKSmoothError, ValueError):
    code = "invalid-tableau"


class NonFiniteStateError(RKSmoothError, ArithmeticError):
    code = "non-finite-state"

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class DegenerateFitError(RKSmoothError, ValueError):
    code = "degenerate-fit"


class GridMismatchError(RKSmoothError, ValueError):
    code = "grid-mismatch"


class WeightError(RKSmoothError, ValueError):
    code = "weight-sum"


class ShapeError(RKSmoothError, ValueError):
    code = "shape-mismatch"


class NonScalarLossError(RKSmoothError, ValueError):
    code = "non-scalar-loss"


class LabelRangeError(RKSmoothError, ValueError):
    code = "label-out-of-range"


class RejectionLimitError(RKSmoothError, RuntimeError):
    code = "rejection-limit"


class NonFiniteLossError(RKSmoothError, ArithmeticError):
    code = "non-finite-loss"


class NonFiniteUpdateError(RKSmoothError, ArithmeticError):
    code = "non-finite-update"


class IdxFormatError(RKSmoothError, ValueError):
    code = "idx-format"


class BadMagicError(IdxFormatError):
    code = "bad-magic"


class TruncatedFileError(IdxFormatError):
    code = "truncated-file"


class CountMismatchError(IdxFormatError):
    code = "count-mismatch"


class ConfigError(RKSmoothError, ValueError):
    code = "config"

    def __init__(self, message, key=None):
        if key:
            message = f"{key}: {message}"
        super().__init__(message)
        self.key = key


class CheckpointError(RKSmoothError, FileNotFoundError):
    code = "missing-checkpoint"
