"""Exception taxonomy shared by all vgcn modules."""


class VgcnError(Exception):
    """Base class for every error this package raises deliberately."""


# --- dataset / file handling -------------------------------------------------

class MalformedFileError(VgcnError):
    """A dataset file violates its documented line format."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class IndexOutOfRangeError(VgcnError):
    """A node or class index falls outside the declared range."""


class InconsistentDimensionsError(VgcnError):
    """Row counts of related dataset files disagree."""


# --- graph construction ------------------------------------------------------

class InvalidKError(VgcnError):
    """Neighbor count outside [1, N-1]."""


class ZeroVectorError(VgcnError):
    """Cosine distance requested for an all-zero feature row."""


class AsymmetricInputError(VgcnError):
    """A matrix that must be symmetric is not."""


class NegativeEntryError(VgcnError):
    """A matrix that must be non-negative has a negative entry."""


class InfeasibleSpecError(VgcnError):
    """A perturbation asks for more additions/removals than the graph allows."""


# --- numerics ----------------------------------------------------------------

class ShapeMismatchError(VgcnError):
    """Operands have incompatible shapes."""


class EmptyMaskError(VgcnError):
    """An operation over masked nodes received an empty mask."""


class UnsupportedPrimitiveError(VgcnError):
    """The differentiation engine was asked to handle something it cannot."""


class MismatchedSupportError(VgcnError):
    """Two edge distributions are defined over different pair sets."""


class TooLargeToEnumerateError(VgcnError):
    """Exhaustive enumeration requested beyond the hard pair-count bound."""


class InvalidSmoothingError(VgcnError):
    """Prior smoothing values must lie strictly inside (0, 1)."""


class NonFiniteObjectiveError(VgcnError):
    """Training objective became NaN or infinite."""

    def __init__(self, epoch, value):
        self.epoch = epoch
        self.value = value
        super().__init__(f"objective became non-finite ({value}) at epoch {epoch}")


class CheckpointMismatchError(VgcnError):
    """A checkpoint's contents disagree with what the caller expects."""


class AllCellsFailedError(VgcnError):
    """Every cell of a grid search failed to train."""


class ConfigError(VgcnError):
    """A training or experiment configuration violates its constraints."""
