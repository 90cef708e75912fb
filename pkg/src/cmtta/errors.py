"""Exception hierarchy shared by all cmtta modules.

Three base classes map onto the CLI exit codes: ``ConfigError`` (usage or
configuration problems, exit 1), ``DataError`` (malformed or inconsistent
inputs, exit 2) and ``NumericalError`` (optimization blow-ups, exit 3).
"""


class ConfigError(Exception):
    """Bad usage or configuration: wrong flag combination, bad config field."""


class DataError(Exception):
    """Input data is malformed, inconsistent, or violates a precondition."""


class NumericalError(Exception):
    """A numerical computation produced non-finite results."""


# --- file format / validation -------------------------------------------------

class MagicMismatch(DataError):
    """File does not start with the expected magic bytes."""


class TruncatedFile(DataError):
    """File ended before the payload announced in its header."""


class NonFiniteValue(DataError):
    """A matrix payload contains NaN or Inf."""


class DuplicateId(DataError):
    """Two rows in an embedding set share the same identifier."""


class ZeroVectorRow(DataError):
    """A row that must be normalized has zero L2 norm."""

    def __init__(self, index: int):
        super().__init__(f"row {index} has zero norm and cannot be normalized")
        self.index = index


class IoFailure(DataError):
    """Underlying OS-level read/write failure."""


# --- shape / precondition checks ----------------------------------------------

class DimMismatch(DataError):
    """Embedding dimensions of two operands disagree."""


class ModalityMismatch(DataError):
    """Operation applied to an embedding set of the wrong modality."""


class NotNormalized(DataError):
    """Operation requires unit-norm rows but the set is not normalized."""


class ShapeMismatch(DataError):
    """Matrix shapes are inconsistent with each other."""


class KOutOfRange(DataError):
    """Requested top-k width is outside [1, gallery size]."""


class LengthMismatch(DataError):
    """Two aligned sequences have different lengths."""


# --- retrieval / labels -------------------------------------------------------

class MissingLabels(DataError):
    """Identity labels are required but absent."""


class QueryWithoutPositive(DataError):
    """A query's label never occurs in the gallery labels."""

    def __init__(self, index: int):
        super().__init__(f"query {index} has no positive gallery item")
        self.index = index


class DegenerateClasses(DataError):
    """AUC needs at least one sample of each class."""


# --- adaptation ---------------------------------------------------------------

class NoReliableQueries(DataError):
    """Cycle-consistency selection rejected every query."""


class NonFiniteLoss(NumericalError):
    """Loss or gradient became NaN/Inf during adaptation."""

    def __init__(self, message: str, query: int | None = None, candidate: int | None = None):
        super().__init__(message)
        self.query = query
        self.candidate = candidate


class ExternalScoresCannotAdapt(ConfigError):
    """Adaptation requested on a score-only input with no embeddings."""


class ConfigParse(ConfigError):
    """Config file is malformed or a field has the wrong type."""
