"""Exception types shared across the package."""


class WearMocapError(Exception):
    """Base class for all package errors."""


class DegenerateInput(WearMocapError, ValueError):
    pass


class DegenerateConfiguration(WearMocapError, ValueError):
    pass


class SequenceTooShort(WearMocapError, ValueError):
    pass


class EmptyStream(WearMocapError, ValueError):
    pass


class InsufficientPeaks(WearMocapError, ValueError):
    pass


class AmbiguousExtremum(WearMocapError, ValueError):
    pass


class LengthMismatch(WearMocapError, ValueError):
    pass


class ShapeMismatch(WearMocapError, ValueError):
    pass


class DataShapeMismatch(WearMocapError, ValueError):
    pass


class GraphNotRecorded(WearMocapError, RuntimeError):
    pass


class BarrierTimeout(WearMocapError, RuntimeError):
    pass


class QueueOverflow(WearMocapError, RuntimeError):
    def __init__(self, message, camera=None, cycle=None):
        super().__init__(message)
        self.camera = camera
        self.cycle = cycle


class ConfigError(WearMocapError, ValueError):
    pass


class NumericFailure(WearMocapError, FloatingPointError):
    pass
