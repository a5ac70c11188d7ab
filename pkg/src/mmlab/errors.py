"""Exception hierarchy shared by every mmlab module."""


class MMLabError(Exception):
    """Base class for all library errors."""


# market data
class DataError(MMLabError, ValueError):
    """Malformed or inconsistent tick data."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class MissingField(DataError):
    pass


class NonMonotoneTime(DataError):
    pass


class CrossedBook(DataError):
    pass


class MalformedNumber(DataError):
    pass


class ZeroDepth(DataError):
    pass


class InsufficientSessions(MMLabError, ValueError):
    pass


# tabular solvers
class SingularSystem(MMLabError, ArithmeticError):
    pass


# environment
class SeriesTooShort(MMLabError, ValueError):
    pass


class SteppedPastEnd(MMLabError, RuntimeError):
    pass


class InsufficientHistory(MMLabError, ValueError):
    pass


# network / training
class DimensionMismatch(MMLabError, ValueError):
    pass


class ShapeMismatch(MMLabError, ValueError):
    pass


class EmptyBatch(MMLabError, ValueError):
    pass


class BadCheckpoint(MMLabError, ValueError):
    pass


# evaluation
class ZeroVariance(MMLabError, ArithmeticError):
    pass


class TooFewDays(MMLabError, ValueError):
    pass


class NoCheckpoints(MMLabError, ValueError):
    pass


class ZeroTrades(MMLabError, ArithmeticError):
    pass


# partial dependence
class EmptyLog(MMLabError, ValueError):
    pass


class BadRange(MMLabError, ValueError):
    pass
