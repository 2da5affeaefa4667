"""Exception hierarchy shared by every module."""


class MotionRankError(Exception):
    """Base class for all package errors."""


class InvalidShapeError(MotionRankError, ValueError):
    pass


class InvalidArgumentError(MotionRankError, ValueError):
    pass


class InvalidConfigError(InvalidArgumentError):
    pass


class DegenerateWindowError(InvalidArgumentError):
    """Raised when a window has a zero final coefficient (T == 1)."""


class NumericError(MotionRankError, ArithmeticError):
    pass


class MissingFrameError(MotionRankError, FileNotFoundError):
    pass


class DecodeError(MotionRankError, OSError):
    pass
