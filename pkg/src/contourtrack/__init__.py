"""Model-based 3D object tracking with a contour energy refined by Basin-Hopping."""

from __future__ import annotations

__version__ = "0.1.0"

from .config import Config
from .contour import EdgeType, classify_edge, detect_contours, sample_contour
from .energy import EnergyContext, contour_energy, energy_gradient
from .errors import (
    AllSamplesClipped,
    BehindCamera,
    ConfigError,
    ContourTrackError,
    DataError,
    EmptyErrors,
    GimbalLock,
    InfeasibleStart,
    NoConsensus,
    NoFaceHit,
    TooFewPoints,
    TrackingLost,
)
from .evaluation import EvalReport, pose_error, success_auc
from .geometry import CameraIntrinsics, Mesh, Pose, extrapolate, pose_from_params, project
from .image import GradientField, GrayImage, gaussian_blur, gradient
from .keypoints import anchor_3d, avg_reproj_error, detect_corners, klt_failed, solve_pnp_ransac, track_flow
from .optimizer import Box, HopSchedule, Nonlinear, basin_hopping, hop_schedule, local_optimize, refine_pose
from .tracker import SearchBounds, Tracker, bounds_fallback, bounds_from_keypoints
from .visibility import Icosphere, VisibilityMap, bake_visibility, build_icosphere
