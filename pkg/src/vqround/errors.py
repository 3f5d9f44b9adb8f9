"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: file and format problems
exit 2, array-shape incompatibilities exit 3, out-of-range parameters
exit 4, and a failed runtime inequality check exits 5.
"""


class VqRoundError(Exception):
    """Base class for every error raised by this package."""


class IoFailure(VqRoundError):
    """OS-level read/write failure."""


class TensorFormatError(VqRoundError):
    """Container file does not conform to the binary layout."""


class MagicMismatch(TensorFormatError):
    pass


class VersionUnsupported(TensorFormatError):
    pass


class TruncatedPayload(TensorFormatError):
    pass


class NonFiniteValue(TensorFormatError):
    """NaN or Inf encountered where only finite values are allowed."""


class ShapeError(VqRoundError):
    """Array dimensions incompatible with the requested operation."""


class ShapeMismatch(ShapeError):
    pass


class RaggedRows(ShapeError):
    pass


class IndivisibleShape(ShapeError):
    pass


class ShapeFactorizationMismatch(ShapeError):
    pass


class ArchitectureMismatch(ShapeError):
    pass


class EmptyCalibration(ShapeError):
    pass


class DomainError(VqRoundError):
    """Scalar parameter outside its valid range."""


class BitsOutOfRange(DomainError):
    pass


class OutOfRange(DomainError):
    pass


class KTooLarge(DomainError):
    pass


class RankTooLarge(DomainError):
    pass


class BudgetInfeasible(DomainError):
    pass


class StepOutOfRange(DomainError):
    pass


class NotPositiveDefinite(DomainError):
    """Matrix stayed non-positive-definite even after damping."""


class TheoremViolation(VqRoundError):
    """An inequality that must hold analytically failed on actual data."""
