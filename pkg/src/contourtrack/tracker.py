"""Frame-by-frame tracking: KLT + PnP preliminary pose, search bounds, contour refinement."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import keypoints as kp
from .config import Config
from .contour import ContourDetector
from .energy import EnergyContext
from .errors import NoConsensus, TrackingLost
from .geometry import CameraIntrinsics, Mesh, Pose, extrapolate, model_diameter, params_from_pose, rotation_from_euler
from .image import GrayImage, gradient
from .optimizer import Box, Nonlinear, refine
from .raster import footprint
from .visibility import Icosphere, VisibilityMap, build_icosphere, load_or_bake

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchBounds:
    """Feasible region around ``center``, expressed in the chart anchored there.

    ``kind`` is ``"keypoints"`` (reprojection-error budget ``e_max`` over the
    correspondences ``(x3d, uv)`` plus a loose guard box) or ``"fallback"`` (box only).
    Translation half-widths are absolute lengths, the last one along the camera axis.
    """

    kind: str
    center: Pose
    rot_half: np.ndarray
    trans_half: np.ndarray
    k: CameraIntrinsics | None = None
    x3d: np.ndarray | None = None
    uv: np.ndarray | None = None
    e_max: float = 0.0
    e_ref: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.rot_half) <= 0) or np.any(np.asarray(self.trans_half) <= 0):
            raise ValueError("half-widths must be positive")
        if self.kind == "keypoints" and not self.e_max > 0:
            raise ValueError("e_max must be positive")
        if self.kind not in ("keypoints", "fallback"):
            raise ValueError(f"unknown bounds kind {self.kind!r}")

    def box(self) -> Box:
        hw = np.concatenate([self.rot_half, self.trans_half])
        return Box(-hw, hw)

    def reprojection_error(self, params) -> float:
        """Mean pixel error of the correspondences at ``params`` (behind-camera points penalized)."""
        p = np.asarray(params, dtype=float)
        r = rotation_from_euler(p[:3]) @ self.center.rotation
        t = self.center.translation + p[3:6]
        xc = self.x3d @ r.T + t
        z = xc[:, 2]
        front = z > 1e-9
        zs = np.where(front, z, 1.0)
        du = self.k.fx * xc[:, 0] / zs + self.k.cx - self.uv[:, 0]
        dv = self.k.fy * xc[:, 1] / zs + self.k.cy - self.uv[:, 1]
        return float(np.where(front, np.hypot(du, dv), kp.BEHIND_PENALTY).mean())

    def constraint_value(self, params) -> float:
        """``e(P) - e(P_hat) - e_max``; feasible when <= 0. Always -1 for a fallback box."""
        if self.kind != "keypoints":
            return -1.0
        return self.reprojection_error(params) - self.e_ref - self.e_max

    def constraints(self) -> list:
        out = [self.box()]
        if self.kind == "keypoints":
            out.append(Nonlinear(self.constraint_value))
        return out

    def contains(self, pose: Pose, tol: float = 1e-6) -> bool:
        p = params_from_pose(pose, self.center)
        return self.box().contains(p, tol) and self.constraint_value(p) <= tol


def bounds_from_keypoints(p_hat: Pose, x3d, uv, k: CameraIntrinsics, e_max: float = 2.5,
                          diameter: float = 1.0, safety_rot_deg: float = 60.0,
                          safety_trans: float = 0.5) -> SearchBounds:
    x3d = np.asarray(x3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    e_ref = kp.avg_reproj_error(p_hat, x3d, uv, k)
    return SearchBounds("keypoints", p_hat, np.full(3, math.radians(safety_rot_deg)),
                        np.full(3, safety_trans * diameter), k, x3d, uv, e_max, e_ref)


def bounds_fallback(center: Pose, diameter: float, rot_deg: float = 30.0, trans_xy: float = 0.1,
                    trans_z: float = 0.2) -> SearchBounds:
    if not diameter > 0:
        raise ValueError("diameter must be positive")
    return SearchBounds("fallback", center, np.full(3, math.radians(rot_deg)),
                        np.array([trans_xy, trans_xy, trans_z]) * diameter)


@dataclass
class FrameReport:
    frame: int
    path: str
    n_tracked: int
    inlier_rate: float
    energy: float
    samples: int
    hops: tuple = (0, 0)
    seconds: float = 0.0


@dataclass
class TrackerState:
    poses: list = field(default_factory=list)
    tracks: kp.TrackedPoints = field(default_factory=kp.TrackedPoints.empty)
    prev: GrayImage | None = None
    lost_streak: int = 0
    reports: list = field(default_factory=list)


class Tracker:
    """Owns the per-sequence state. Call :meth:`initialize` with frame 0 and its pose."""

    def __init__(self, mesh: Mesh, k: CameraIntrinsics, config: Config | None = None,
                 ico: Icosphere | None = None, vmap: VisibilityMap | None = None,
                 cache_dir=None, threads: int = 1):
        self.mesh = mesh
        self.k = k
        self.config = config or Config()
        cfg = self.config
        self.ico = ico or build_icosphere(cfg.icosphere_level)
        self.vmap = vmap or load_or_bake(mesh, self.ico, cfg.visibility_resolution, cache_dir, threads)
        self.diameter = model_diameter(mesh)
        self.detector = ContourDetector(mesh, cfg.theta_sharp, cfg.boundary_edges)
        self.settings = cfg.refine_settings(mesh.n_vertices, mesh.n_faces)
        self.state = TrackerState()

    # -- keypoints ------------------------------------------------------------

    def _refresh_tracks(self, frame: GrayImage, pose: Pose, keep: kp.TrackedPoints) -> kp.TrackedPoints:
        cfg = self.config
        room = cfg.max_keypoints - len(keep)
        if room <= 0:
            return keep
        mask = footprint(self.mesh, pose, self.k, (frame.width, frame.height))
        if cfg.mask_erode > 0:
            mask = ndimage.binary_erosion(mask, iterations=cfg.mask_erode)
        r = int(math.ceil(cfg.corner_min_distance))
        for x, y in np.rint(keep.uv).astype(int):
            mask[max(0, y - r):y + r + 1, max(0, x - r):x + r + 1] = False
        pts = kp.detect_corners(frame, mask, room, cfg.corner_min_distance, cfg.corner_quality,
                                cfg.corner_window)
        return keep.concat(kp.anchor_3d(pts, pose, self.k, self.mesh))

    def initialize(self, frame: GrayImage, pose: Pose) -> Pose:
        self.state = TrackerState(poses=[pose], prev=frame)
        self.state.tracks = self._refresh_tracks(frame, pose, kp.TrackedPoints.empty())
        self.state.reports.append(FrameReport(0, "init", len(self.state.tracks), 1.0, float("nan"), 0))
        return pose

    # -- per frame ------------------------------------------------------------

    def _preliminary(self, frame: GrayImage):
        cfg, st = self.config, self.state
        tracks = st.tracks
        uv, ok = kp.track_flow(st.prev, frame, tracks.uv, cfg.klt_levels, cfg.klt_window,
                               cfg.klt_max_iter, cfg.klt_eps, cfg.klt_min_eig, cfg.klt_max_residual)
        moved = kp.TrackedPoints(uv[ok], tracks.x[ok], np.ones(int(ok.sum()), dtype=bool))
        n = len(moved)
        pnp = None
        rate = 0.0
        if n >= 4:
            try:
                pnp = kp.solve_pnp_ransac(moved.x, moved.uv, self.k, self._seed(1), cfg.ransac_iterations,
                                          cfg.ransac_threshold, cfg.ransac_early_exit, cfg.klt_min_inlier_rate)
                rate = pnp.inlier_rate
            except NoConsensus as exc:
                rate = exc.inlier_rate
        failed = n < cfg.klt_min_points or rate < cfg.klt_min_inlier_rate or pnp is None
        if failed:
            poses = st.poses
            init = extrapolate(poses[-2], poses[-1]) if len(poses) >= 2 else poses[-1]
            bounds = bounds_fallback(init, self.diameter, cfg.fallback_rot_deg,
                                     cfg.fallback_trans_xy, cfg.fallback_trans_z)
            return init, bounds, "fallback", moved, n, rate
        inl = pnp.inliers
        survivors = kp.TrackedPoints(moved.uv[inl], moved.x[inl], np.ones(len(inl), dtype=bool))
        bounds = bounds_from_keypoints(pnp.pose, survivors.x, survivors.uv, self.k, cfg.e_max,
                                       self.diameter, cfg.safety_rot_deg, cfg.safety_trans)
        return pnp.pose, bounds, "klt", survivors, n, rate

    def _seed(self, salt: int) -> int:
        ss = np.random.SeedSequence([self.config.seed, len(self.state.poses), salt])
        return int(ss.generate_state(1)[0])

    def track_frame(self, frame: GrayImage) -> Pose:
        st, cfg = self.state, self.config
        if not st.poses:
            raise RuntimeError("tracker not initialized")
        t0 = time.perf_counter()
        index = len(st.poses)
        init, bounds, path, survivors, n, rate = self._preliminary(frame)
        if cfg.refine:
            res = refine(frame, self.mesh, self.k, init, bounds.constraints(), self._seed(2),
                         settings=self.settings, ico=self.ico, vmap=self.vmap,
                         detector=self.detector, diameter=self.diameter, **cfg.energy_kwargs())
            pose, energy, samples, hops = res.pose, res.energy, res.samples, res.hops
        else:
            ctx = EnergyContext(gradient(frame), self.mesh, self.k, init, self.ico, self.vmap,
                                diameter=self.diameter, detector=self.detector, **cfg.energy_kwargs())
            energy, samples = ctx.evaluate(np.zeros(6))
            pose, hops = init, (0, 0)
        st.lost_streak = st.lost_streak + 1 if samples == 0 else 0
        st.reports.append(FrameReport(index, path, n, rate, energy, samples, hops, time.perf_counter() - t0))
        log.info("frame %d: %s n=%d inliers=%.2f E=%.4f samples=%d", index, path, n, rate, energy, samples)
        if st.lost_streak >= cfg.lost_after:
            raise TrackingLost(f"no contour in view for {st.lost_streak} consecutive frames (frame {index})")
        st.poses.append(pose)
        st.tracks = self._refresh_tracks(frame, pose, survivors)
        st.prev = frame
        return pose

    def track(self, frames, init_pose: Pose) -> list[Pose]:
        """Track a whole sequence; ``frames[0]`` is paired with ``init_pose``."""
        it = iter(frames)
        self.initialize(next(it), init_pose)
        for f in it:
            self.track_frame(f)
        return list(self.state.poses)


def write_diagnostics(path, reports: list[FrameReport]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "path", "n_tracked", "inlier_rate", "energy", "samples",
                    "hops_blurred", "hops_final"])
        for r in reports:
            w.writerow([r.frame, r.path, r.n_tracked, f"{r.inlier_rate:.6f}", f"{r.energy:.9g}",
                        r.samples, r.hops[0], r.hops[1]])

