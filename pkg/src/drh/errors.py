"""Exception hierarchy shared by all drh modules.

Data-shaped failures (bad files, mismatched dimensions) derive from
DataError; numeric failures (divergence) derive from NumericError so the
CLI can map them to distinct exit codes.
"""


class DrhError(Exception):
    """Base class for all drh errors."""


class DataError(DrhError):
    """Malformed input data or incompatible shapes."""


class NumericError(DrhError):
    """Numeric breakdown during computation."""


class MalformedHeader(DataError):
    """File does not start with the expected magic/version."""


class VersionMismatch(DataError):
    """File carries an unsupported format version."""


class DimensionMismatch(DataError):
    """Declared sizes disagree with the actual payload or operand shapes."""


class NonFiniteValue(DataError):
    """A NaN or Inf was found where finite values are required."""


class IoFailure(DataError):
    """Underlying I/O operation failed."""


class EmptyProjection(DataError):
    """A pixel bounding box collapsed below one feature-map cell."""


class LengthMismatch(DataError):
    """Hash codes of different bit lengths were combined."""


class DuplicateImageId(DataError):
    """Two index records share one image id."""


class EmptyTrainingSet(DataError):
    """Training was invoked without any descriptors."""


class DivergenceDetected(NumericError):
    """Training loss became non-finite."""


class ExpansionDepthExceedsList(DataError):
    """Query expansion depth q exceeds the candidate list length."""


class EmptyPositives(DataError):
    """A ground-truth query has no positive images."""


class MissingQueryResult(DataError):
    """No ranking was supplied for a ground-truth query."""


class MalformedQueryFile(DataError):
    """A ground-truth query file does not follow the expected layout."""
