"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes (see cli.EXIT_CODES).
"""


class SctrackError(Exception):
    """Base class for package errors."""


class ConfigError(SctrackError):
    """Invalid or incomplete configuration."""


class DataError(SctrackError):
    """Malformed or inconsistent input data."""


class MalformedFileError(DataError):
    """A file on disk does not match its expected binary/text layout."""


class AlignmentError(DataError):
    """Tracking results do not line up with the tracklets they claim to cover."""


class DimensionError(SctrackError, ValueError):
    """Array shapes incompatible with an operation; message reports both shapes."""


class EmptyInputError(SctrackError, ValueError):
    """An operation that requires at least one element received none."""


class DegenerateStatisticsError(SctrackError, ValueError):
    """Batch statistics requested over fewer than two samples."""


class UndefinedSimilarityError(SctrackError, ValueError):
    """Cosine similarity requested for a zero-norm vector."""


class NumericalError(SctrackError, ArithmeticError):
    """A numerical procedure failed (non-finite values, lost positive-definiteness)."""


class NonFiniteGradientError(NumericalError):
    """An optimizer step was rejected because a gradient contained NaN/Inf."""


class CheckpointError(SctrackError):
    """Checkpoint file missing, unreadable, or from an incompatible format version."""
