"""Exception types raised across the package."""


class MioError(Exception):
    """Base class for all package errors."""


class GimbalLock(MioError, ValueError):
    pass


class NonMonotonicTimestamps(MioError, ValueError):
    pass


class WaypointOutsideBounds(MioError, ValueError):
    pass


class PathCrossesWall(MioError, ValueError):
    pass


class PoseOutsideBounds(MioError, ValueError):
    pass


class TrajectoryTooShort(MioError, ValueError):
    pass


class EmptyInput(MioError, ValueError):
    pass


class ShapeMismatch(MioError, ValueError):
    pass


class EmptyWindow(MioError, ValueError):
    pass


class GraphNotRecorded(MioError, RuntimeError):
    pass


class EmptyDataset(MioError, ValueError):
    pass


class DivergedLoss(MioError, RuntimeError):
    pass


class CheckpointMismatch(MioError, ValueError):
    pass


class NonMonotonicStream(MioError, ValueError):
    pass


class BadMagic(MioError, ValueError):
    pass


class TruncatedFrame(MioError, ValueError):
    pass


class EmptyTrajectory(MioError, ValueError):
    pass


class NoTemporalOverlap(MioError, ValueError):
    pass


class UplinkUnavailable(MioError, ConnectionError):
    pass


class BindFailure(MioError, OSError):
    pass


class SourceExhausted(MioError):
    """A stream source has no more events (the normal end of a run)."""
