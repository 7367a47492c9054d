"""Exception hierarchy shared by every vseg module."""


class VsegError(Exception):
    """Base class for all errors raised by vseg."""


class ShapeError(VsegError, ValueError):
    pass


class StateError(VsegError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class ConfigError(VsegError, ValueError):
    pass


class DataError(VsegError, ValueError):
    pass


class DegenerateInputError(DataError):
    """Input has zero spread where a normalization needs a positive one."""


class IngestionError(VsegError, OSError):
    pass


class FormatError(VsegError, ValueError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class UndefinedMetricError(VsegError, ValueError):
    pass


class TrainingDivergedError(VsegError, RuntimeError):
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
