"""Exception types raised across the tracking pipeline."""

from __future__ import annotations


class ContourTrackError(Exception):
    """Base class for all library errors."""


class DataError(ContourTrackError):
    """Malformed or missing input data (meshes, frames, pose files)."""


class BehindCamera(ContourTrackError):
    pass


class GimbalLock(ContourTrackError):
    pass


class LevelTooLarge(ContourTrackError):
    pass


class DegenerateMeshWarning(UserWarning):
    """A mesh face has zero area and is treated as invisible everywhere."""


class NoFaceHit(ContourTrackError):
    """No icosphere face contains the view direction (internal error)."""


class AllSamplesClipped(ContourTrackError):
    pass


class ImageTooSmall(ContourTrackError):
    pass


class OutOfDomain(ContourTrackError):
    pass


class TooFewPoints(ContourTrackError):
    pass


class NoConsensus(ContourTrackError):
    def __init__(self, message: str, inlier_rate: float = 0.0):
        super().__init__(message)
        self.inlier_rate = inlier_rate


class InfeasibleStart(ContourTrackError):
    pass


class TrackingLost(ContourTrackError):
    pass


class EmptyErrors(ContourTrackError):
    pass


class ConfigError(ContourTrackError):
    pass
