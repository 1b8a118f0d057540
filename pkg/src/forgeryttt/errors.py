"""Exception types raised across the package."""


class ForgeryTTTError(Exception):
    """Base class for all package errors."""


class ShapeError(ForgeryTTTError, ValueError):
    pass


class InvalidInstanceError(ForgeryTTTError, ValueError):
    pass


class PlacementError(ForgeryTTTError, ValueError):
    """A transformed instance does not fit inside the target image."""


class DegenerateOffsetError(ForgeryTTTError, ValueError):
    pass


class ExhaustedPoolError(ForgeryTTTError):
    """The source pool cannot supply the images a manipulation needs."""


class EmptyGroupError(ForgeryTTTError, ValueError):
    pass


class InvalidQueryError(ForgeryTTTError, ValueError):
    pass


class TrainingDivergedError(ForgeryTTTError, RuntimeError):
    pass


class EmptyDatasetError(ForgeryTTTError):
    pass


class UnsupportedDistortionError(ForgeryTTTError, ValueError):
    pass


class CheckpointError(ForgeryTTTError):
    pass


class AUCUndefinedError(ForgeryTTTError, ValueError):
    """AUC needs both labels present. The balanced accuracy is still attached."""

    def __init__(self, message: str, acc: float):
        super().__init__(message)
        self.acc = acc
