"""Exception types raised across the package."""


class FullSubError(Exception):
    """Base class for all package errors."""


class InvalidArgument(FullSubError, ValueError):
    pass


class ShapeMismatch(FullSubError, ValueError):
    pass


class OutOfRange(FullSubError, ValueError):
    pass


class CorruptWeights(FullSubError):
    pass


class DecodeError(FullSubError):
    pass


class NonFiniteLoss(FullSubError, FloatingPointError):
    pass
