"""Exception hierarchy.

Each family carries the process exit code the CLI maps it to.
"""


class YotoError(Exception):
    exit_code = 1


class ParseError(YotoError):
    """Malformed input file."""

    exit_code = 2

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateDataError(YotoError):
    exit_code = 3

    def __init__(self, message, frame=None):
        if frame is not None:
            message = f"frame {frame}: {message}"
        super().__init__(message)
        self.frame = frame


class NonPositiveDepth(DegenerateDataError):
    pass


class NonPositiveDisparity(DegenerateDataError):
    pass


class DegenerateHand(DegenerateDataError):
    pass


class DegenerateCloud(DegenerateDataError):
    pass


class IndexOutOfRange(YotoError, IndexError):
    exit_code = 2


class MismatchedStreams(YotoError):
    exit_code = 2


class TooShort(DegenerateDataError):
    pass


class CoordinationError(YotoError):
    exit_code = 4


class MixedCoordination(CoordinationError):
    pass


class NotAsynchronous(CoordinationError):
    pass


class LengthMismatch(CoordinationError):
    pass


class WorkspaceError(YotoError):
    exit_code = 5


class OutOfWorkspace(WorkspaceError):
    pass


class UnknownObject(WorkspaceError):
    pass


class EmptyRegion(WorkspaceError):
    pass


class RetryExhausted(WorkspaceError):
    pass


class AmbiguousAssociation(WorkspaceError):
    pass


class DatasetError(YotoError):
    exit_code = 6


class EmptyDataset(DatasetError):
    pass


class InconsistentHorizon(DatasetError):
    pass


class ShapeMismatch(DatasetError):
    pass


class BadStep(YotoError, ValueError):
    pass
