"""Exception hierarchy shared by every stage of the pipeline."""


class KShapError(Exception):
    """Base class for all library errors."""


# --- dataset ---------------------------------------------------------------


class EmptyDataset(KShapError, ValueError):
    pass


class MissingColumn(KShapError, ValueError):
    def __init__(self, column, path=None):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"missing or misplaced column {column!r}{where}")


class CellError(KShapError, ValueError):
    """Bad cell in a CSV file; carries 1-based data-row and column name."""

    kind = "bad value"

    def __init__(self, row, col, value=None):
        self.row = row
        self.col = col
        self.value = value
        super().__init__(f"{self.kind} at row {row}, column {col!r}: {value!r}")


class NonFiniteValue(CellError):
    kind = "non-finite value"


class TypeMismatch(CellError):
    kind = "type mismatch"


class IoFailure(KShapError, OSError):
    pass


class SchemaMismatch(KShapError, ValueError):
    pass


class InvalidDataset(KShapError, ValueError):
    pass


# --- simulator -------------------------------------------------------------


class DegenerateMarket(KShapError, RuntimeError):
    pass


class InsufficientHistory(KShapError, ValueError):
    pass


class InvalidConfig(KShapError, ValueError):
    pass


# --- forest / shap ---------------------------------------------------------


class DimensionMismatch(KShapError, ValueError):
    pass


class NoValidSplit(KShapError):
    pass


class DegenerateAction(UserWarning):
    """Constant action column; trees for it collapse to a single leaf."""


class TooManyFeatures(KShapError, ValueError):
    pass


class EmptyBackground(KShapError, ValueError):
    pass


# --- clustering / metrics --------------------------------------------------


class TooFewPoints(KShapError, ValueError):
    pass


class RangeTooSmall(KShapError, ValueError):
    pass


class LengthMismatch(KShapError, ValueError):
    pass


class SingleCluster(KShapError, ValueError):
    pass


class StageError(KShapError):
    """A component error re-raised with the pipeline stage that produced it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
