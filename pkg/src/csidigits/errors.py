"""Exception hierarchy.

``DataError`` subclasses describe bad inputs (exit code 2 at the CLI),
``NumericError`` describes non-finite values (exit code 3).
"""


class CsiError(Exception):
    pass


class DataError(CsiError, ValueError):
    pass


class NumericError(CsiError, ArithmeticError):
    pass


class MalformedRow(DataError):
    pass


class NonMonotonicTimestamp(DataError):
    pass


class EmptyFile(DataError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptPayload(DataError):
    pass


class LayoutMismatch(DataError):
    pass


class EmptySequence(DataError):
    pass


class TooFewRows(DataError):
    pass


class NonIncreasingTimestamps(DataError):
    pass


class SeriesTooShort(DataError):
    pass


class LengthMismatch(DataError):
    pass


class TooShort(DataError):
    pass


class WidthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class KernelTooLarge(DataError):
    pass


class BatchTooSmall(DataError):
    pass


class InvalidOneHot(DataError):
    pass


class NonDeterministicModel(NumericError):
    pass


class InsufficientPairs(DataError):
    pass


class WrongCheckpointKind(DataError):
    pass


class WeightConstraintViolated(DataError):
    pass


class EmptyDataset(DataError):
    pass


class SingleClass(DataError):
    pass


class BadN(DataError):
    pass


class UnlabeledSample(DataError):
    pass


class AllWindowsDropped(DataError):
    pass
