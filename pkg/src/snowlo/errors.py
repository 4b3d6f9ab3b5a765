"""Exception types raised across the toolkit."""


class SnowLOError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgument(SnowLOError, ValueError):
    pass


class DegeneratePoint(SnowLOError, ValueError):
    """A point too close to the sensor origin for spherical coordinates."""


class EmptyAfterPreprocess(SnowLOError):
    pass


class InsufficientCorrespondences(SnowLOError):
    """Too few gated point pairs survived to constrain a pose.

    ``level`` is set when raised from coarse-to-fine registration.
    """

    def __init__(self, message, n_pairs=0, level=None):
        super().__init__(message)
        self.n_pairs = n_pairs
        self.level = level


class DegenerateGeometry(SnowLOError):
    """The point-to-plane normal equations are (numerically) singular."""


class NoResidual(SnowLOError):
    pass


class MalformedFile(SnowLOError, ValueError):
    pass


class EmptyBreakdown(SnowLOError):
    """No ground-truth subsequence is long enough for drift evaluation."""


class EmptyScene(SnowLOError):
    pass
