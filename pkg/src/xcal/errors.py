"""Exception hierarchy.

Everything raised on purpose by this package derives from ``XcalError`` so
the CLI can map failures onto its exit-code contract in one place.
"""


class XcalError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(XcalError):
    """Array shapes do not line up with the declared channel/window layout."""


# --- dataset construction and ingestion -------------------------------------


class EmptyDataset(XcalError):
    """A dataset or file contains no data rows."""


class MissingColumn(XcalError):
    def __init__(self, name: str):
        super().__init__(f"required column {name!r} not found in header")
        self.name = name


class NonMonotoneTime(XcalError):
    def __init__(self, row: int):
        super().__init__(f"time must be strictly increasing (violated at row {row})")
        self.row = row


class NonFiniteValue(XcalError):
    def __init__(self, row=None, column=None, message=None):
        if message is None:
            message = f"non-finite value at row {row}, column {column!r}"
        super().__init__(message)
        self.row = row
        self.column = column


# --- windowing and slicing ---------------------------------------------------


class WindowTooLong(XcalError):
    """Requested temporal window exceeds the dataset length."""


class NonIntegerWindow(XcalError):
    """Window length in seconds does not map to a whole number of samples."""


class WindowExceedsCycle(XcalError):
    """Warmup plus calibration window leave no usable data."""


# --- normalization ------------------------------------------------------------


class TooFewValues(XcalError):
    """Not enough samples to fit a quantile transform."""


# --- Gaussian process ---------------------------------------------------------


class FactorizationFailed(XcalError):
    """Kernel matrix stayed non-positive-definite after the full jitter ladder."""


# --- statistics ----------------------------------------------------------------


class EmptySample(XcalError):
    """Statistic requested on an empty sample."""


class QOutOfRange(XcalError):
    """Quantile level outside [0, 1]."""


# --- calibration ----------------------------------------------------------------


class DegeneratePrior(XcalError):
    """Zero-width prior produced indistinguishable pilot distances."""


class NoSamplesAccepted(XcalError):
    """Main sampling phase rejected every draw; prior and tolerance disagree."""


class EmptyPosterior(XcalError):
    """Posterior predictive requested from an empty sample set."""


# --- synthetic generator ----------------------------------------------------------


class IdentifiabilityError(XcalError):
    """A measured channel moves the response less than the resolvable floor."""


# --- configuration and artifacts ----------------------------------------------------


class InvalidConfig(XcalError):
    """Configuration file is malformed or violates a module invariant."""


class ArtifactError(XcalError):
    """Artifact file is unreadable, corrupt, or of an unknown format version."""


class ProvenanceMismatch(XcalError):
    """Artifacts built from different configurations were combined."""
