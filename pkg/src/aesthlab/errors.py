"""Exception hierarchy shared by every module.

Every error raised on purpose by the toolkit derives from :class:`AesthlabError`,
so the CLI can turn any of them into a machine-readable error record.
"""


class AesthlabError(ValueError):
    """Base class for all toolkit errors."""


# tabular
class MissingTargetColumn(AesthlabError):
    pass


class NonNumericCell(AesthlabError):
    def __init__(self, row, col, value=None):
        self.row = row
        self.col = col
        super().__init__(f"non-numeric cell at row {row}, column {col!r}: {value!r}")


class EmptyTable(AesthlabError):
    pass


class RangeViolation(AesthlabError):
    def __init__(self, feature, value, lo=None, hi=None):
        self.feature = feature
        self.value = value
        bounds = f" outside [{lo}, {hi}]" if lo is not None else ""
        super().__init__(f"{feature}={value!r}{bounds}")


class WrongColumnSet(AesthlabError):
    pass


class EmptyVoteList(AesthlabError):
    pass


class OutOfScaleVote(AesthlabError):
    pass


class CountsExceedN(AesthlabError):
    pass


class BadGeneratorSpec(AesthlabError):
    pass


# models
class EmptyTrainSet(AesthlabError):
    pass


class DimensionMismatch(AesthlabError):
    pass


class ZeroVariance(AesthlabError):
    pass


class NonConvergence(AesthlabError):
    pass


class NotLinearKernel(AesthlabError):
    pass


class EmptyBatch(AesthlabError):
    pass


class ShapeMismatch(AesthlabError):
    pass


# attribution
class KExceedsN(AesthlabError):
    pass


class TooManyFeatures(AesthlabError):
    pass


class SingularSystem(AesthlabError):
    def __init__(self, message, coalitions=()):
        self.coalitions = list(coalitions)
        super().__init__(message)


class MissingCovers(AesthlabError):
    pass


class EmptyInput(AesthlabError):
    pass


class IndexOutOfRange(AesthlabError):
    pass


# evaluation
class LengthMismatch(AesthlabError):
    pass


class ZeroVarianceTarget(AesthlabError):
    pass


class ConstantInput(AesthlabError):
    pass


class RankDeficient(AesthlabError):
    pass


# pipeline
class IncompatibleExplainMethod(AesthlabError):
    pass


class MissingInput(AesthlabError):
    pass


class UnknownKind(AesthlabError):
    pass
