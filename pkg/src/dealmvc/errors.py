"""Exception hierarchy.

The CLI maps these onto exit codes: ``InvalidInput`` -> 2 (bad flag or
config value), ``DataError`` and ``ShapeMismatch`` -> 3, ``NumericError`` -> 4.
"""


class DealMVCError(Exception):
    pass


class DataError(DealMVCError):
    pass


class MismatchedRows(DataError):
    pass


class EmptyView(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class InvalidShape(DataError, ValueError):
    pass


class BatchTooSmall(DataError, ValueError):
    pass


class MissingDataset(DataError, FileNotFoundError):
    pass


class MissingCheckpoint(DataError, FileNotFoundError):
    pass


class ShapeMismatch(DealMVCError, ValueError):
    pass


class LengthMismatch(ShapeMismatch):
    pass


class ZeroNormRow(DealMVCError, ValueError):
    pass


class InvalidInput(DealMVCError, ValueError):
    pass


class InvalidDistribution(InvalidInput):
    pass


class InvalidThreshold(InvalidInput):
    pass


class TooFewViews(InvalidInput):
    pass


class UntrainedModel(DealMVCError, RuntimeError):
    pass


class NumericError(DealMVCError, ArithmeticError):
    pass


class NonFiniteLoss(NumericError):
    pass


class DegenerateWeights(NumericError):
    pass
