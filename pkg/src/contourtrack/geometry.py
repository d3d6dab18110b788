"""Meshes, rigid poses, pinhole intrinsics and the Euler chart used by the optimizer.

Conventions
-----------
Camera frame: x right, y down, z forward along the optical axis.
A :class:`Pose` maps model coordinates to camera coordinates, ``x_cam = R @ x + t``.
Euler angles ``(a, b, c)`` build ``R = Rz(c) @ Ry(b) @ Rx(a)``; ``b`` is the pitch
and the chart is singular where ``cos(b) == 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DataError, GimbalLock

ORTHO_TOL = 1e-9
GIMBAL_TOL = 1e-7
MIN_DEPTH = 1e-9


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh with counter-clockwise front faces."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices, float)
        f = _frozen(self.faces, np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise DataError(f"vertices must be (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise DataError(f"faces must be (m, 3) triangles, got {f.shape}")
        if len(v) < 3 or len(f) < 1:
            raise DataError("mesh needs at least 3 vertices and 1 face")
        if f.min() < 0 or f.max() >= len(v):
            raise DataError("face index out of range")
        if not np.all(np.isfinite(v)):
            raise DataError("non-finite vertex coordinates")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_normals(self) -> np.ndarray:
        """Unnormalized outward normals (length = twice the face area)."""
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return np.cross(b - a, c - a)

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(), axis=1)

    def centered(self) -> "Mesh":
        """Copy translated so the bounding-box center sits at the origin."""
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return Mesh(self.vertices - 0.5 * (lo + hi), self.faces)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform from model to camera coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(3)
        t.flags.writeable = False
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not (np.allclose(r.T @ r, np.eye(3), atol=ORTHO_TOL, rtol=0)
                and abs(np.linalg.det(r) - 1.0) <= ORTHO_TOL):
            raise ValueError("rotation is not in SO(3)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform model points of shape (..., 3) into the camera frame."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def __repr__(self) -> str:
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DataError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def project_points(k: CameraIntrinsics, x_cam: np.ndarray) -> np.ndarray:
    """Pinhole projection of camera-frame points; no depth check."""
    x_cam = np.asarray(x_cam, dtype=float)
    z = x_cam[..., 2]
    return np.stack([k.fx * x_cam[..., 0] / z + k.cx, k.fy * x_cam[..., 1] / z + k.cy], axis=-1)


def project(pose: Pose, k: CameraIntrinsics, x) -> np.ndarray:
    """Project model points through ``pose`` and ``k``; raises if any is behind the camera."""
    x_cam = pose.apply(x)
    if np.any(x_cam[..., 2] <= MIN_DEPTH):
        raise BehindCamera("point at or behind the camera plane")
    return project_points(k, x_cam)


def rotation_from_euler(angles) -> np.ndarray:
    a, b, c = angles
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    # Rz(c) @ Ry(b) @ Rx(a), expanded
    return np.array([
        [cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa],
        [sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa],
        [-sb, cb * sa, cb * ca],
    ])


def euler_from_rotation(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    sb = -r[2, 0]
    cb = np.hypot(r[0, 0], r[1, 0])
    if cb < GIMBAL_TOL:
        raise GimbalLock(f"pitch at +-90 degrees (|cos(pitch)| = {cb:.2e})")
    return np.array([np.arctan2(r[2, 1], r[2, 2]), np.arctan2(sb, cb), np.arctan2(r[1, 0], r[0, 0])])


def pose_from_params(params, reference: Pose | None = None) -> Pose:
    """Map a 6-vector ``(euler[3], translation[3])`` to a pose.

    With a ``reference`` the chart is centered on it: the Euler rotation is applied
    in camera axes about the model origin and the translation is added in the camera
    frame, so ``params == 0`` gives back ``reference``.
    """
    p = np.asarray(params, dtype=float)
    rot = rotation_from_euler(p[:3])
    if reference is None:
        return Pose(rot, p[3:6])
    return Pose(rot @ reference.rotation, reference.translation + p[3:6])


def params_from_pose(pose: Pose, reference: Pose | None = None) -> np.ndarray:
    if reference is None:
        return np.concatenate([euler_from_rotation(pose.rotation), pose.translation])
    rel = pose.rotation @ reference.rotation.T
    return np.concatenate([euler_from_rotation(rel), pose.translation - reference.translation])


def extrapolate(p_prev2: Pose, p_prev1: Pose) -> Pose:
    """Constant-velocity prediction ``P1 @ (P2^-1 @ P1)``."""
    return p_prev1 @ (p_prev2.inverse() @ p_prev1)


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    c = 0.5 * (np.trace(r) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def model_diameter(mesh: Mesh) -> float:
    """Largest distance between any two vertices."""
    pts = np.unique(mesh.vertices, axis=0)
    if len(pts) > 2000:
        from scipy.spatial import ConvexHull

        try:
            pts = pts[ConvexHull(pts).vertices]
        except Exception:  # flat point sets have no 3D hull
            pass
    best = 0.0
    for i in range(0, len(pts), 512):
        block = pts[i:i + 512]
        d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))
