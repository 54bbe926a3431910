"""Exception types shared across the package."""


class MotionBitsError(Exception):
    """Base class for all package errors."""


class InvalidTransformError(MotionBitsError, ValueError):
    pass


class DegenerateFitError(MotionBitsError, ValueError):
    pass


class NoModelError(MotionBitsError, RuntimeError):
    pass


class FlowFormatError(MotionBitsError, ValueError):
    """Malformed flow file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DimensionMismatchError(MotionBitsError, ValueError):
    pass


class ParameterError(MotionBitsError, ValueError):
    pass


class SceneSpecError(MotionBitsError, ValueError):
    pass


class DomainError(MotionBitsError, ValueError):
    pass
