"""Exception hierarchy shared across the package.

Usage-level problems (bad flags, bad shapes) are ValueErrors; data-level
problems (corrupt files, bad records) derive from DataError; numeric faults
(NaN/Inf where finiteness is guaranteed) derive from NumericFault. The CLI
maps these three families to exit codes 1 / 2 / 3.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateInputError(ValueError):
    """Input too small or too flat for the operation (e.g. LayerNorm on d < 2)."""


class ZeroNormError(ValueError):
    """Vector norm below tolerance; normalization would be meaningless."""


class InvalidProbabilityError(ValueError):
    """Probability parameter outside [0, 1)."""


class ScheduleExhaustedError(ValueError):
    """Learning-rate schedule queried past its final step."""


class StaleTraceError(ValueError):
    """Backward called with a trace that does not match the given parameters."""


class UsageError(ValueError):
    """Bad command-line or configuration input."""


class DataError(Exception):
    """Problem with input data or data files."""


class CorruptCacheError(DataError):
    """Cache file failed validation. Carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class NumericFault(ArithmeticError):
    """Non-finite value appeared where finiteness is guaranteed."""


class OracleFailure(NumericFault):
    """Finite-difference oracle hit a non-finite function evaluation."""
