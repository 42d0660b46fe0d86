"""Exception hierarchy shared across the library and the CLI.

Three branches map onto the CLI exit codes: configuration problems (exit 2),
numerical failures (exit 3), and I/O or data-format problems (exit 4).
"""


class CoherenceError(Exception):
    """Base class for all library errors."""


class ConfigurationError(CoherenceError):
    """Invalid parameters, inconsistent options, or precondition violations."""


class NumericError(CoherenceError):
    """A numerical procedure failed or produced unusable output."""


class DataIOError(CoherenceError):
    """Reading or writing an artifact failed."""


# -- numeric failures ---------------------------------------------------------

class IntegrationDivergedError(NumericError):
    """The trajectory left the representable range during integration."""


class DegenerateDataError(NumericError):
    """The dataset carries no usable geometry (e.g. all points identical)."""


class IsolatedSampleError(NumericError):
    """A sample's kernel row sum underflowed to zero."""

    def __init__(self, row, message=None):
        self.row = int(row)
        super().__init__(message or f"kernel row sum underflowed at sample {self.row}")


class SolverError(NumericError):
    """The iterative eigensolver did not reach the requested residual."""

    def __init__(self, message, residuals=None):
        self.residuals = residuals
        super().__init__(message)


class DegeneratePairError(NumericError):
    """A selected eigenvalue is zero or negative, so the pair is unusable."""


class InsufficientEigenpairsError(NumericError):
    """The decomposition lacks the neighbor eigenvalues a gap report needs."""


class EstimationError(NumericError):
    """An empirical constant could not be estimated from the data."""


class OutOfDistributionError(NumericError):
    """A query point is too far from the training set to evaluate."""


# -- I/O and data-format failures --------------------------------------------

class TrajectoryFormatError(DataIOError):
    """The file could not be parsed in the requested trajectory format."""


class RaggedRowsError(TrajectoryFormatError):
    """Rows of a delimited trajectory file have differing lengths."""


class NonFiniteDataError(DataIOError):
    """The data contains NaN or infinite entries."""


class MissingMetadataError(DataIOError):
    """Required metadata (such as the sampling interval) was not supplied."""


class ShapeError(DataIOError):
    """An array does not have the shape an operation requires."""
