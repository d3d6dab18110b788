"""Discretized contour energy: mean |grad I . n| over samples of the projected contour."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .contour import DEFAULT_SHARP_ANGLE, DEFAULT_SPACING, ContourDetector, ContourSamples, sample_contour
from . import _kernels
from .errors import AllSamplesClipped, NoFaceHit
from .geometry import CameraIntrinsics, Mesh, Pose, model_diameter, pose_from_params, rotation_from_euler
from .image import GradientField, GrayImage, gradient, sample_bilinear_many
from .visibility import Icosphere, VisibilityMap

ROT_STEP = 1e-3
TRANS_STEP = 1e-3
INTERPOLATIONS = ("cubic", "linear")


def spline_coefficients(field_: GradientField) -> np.ndarray:
    """Cubic B-spline coefficients of (gx, gy), shape (h, w, 2), mirror borders."""
    out = np.empty((field_.height, field_.width, 2))
    for c in range(2):
        out[..., c] = ndimage.spline_filter(field_.gxy[..., c], order=3, mode="mirror")
    return out


def sample_field(field_: GradientField, points, interpolation: str = "cubic") -> np.ndarray:
    """Gradient vectors at sub-pixel ``points`` (N, 2) as (x, y)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if interpolation == "linear":
        return sample_bilinear_many(field_, pts)
    coords = [pts[:, 1], pts[:, 0]]
    return np.stack([ndimage.map_coordinates(field_.gxy[..., c], coords, order=3, mode="mirror")
                     for c in range(2)], axis=1)


@dataclass(eq=False)
class EnergyContext:
    """Everything needed to score a pose against one frame.

    ``reference`` anchors the 6-vector chart: params ``(euler, dt)`` stand for
    ``Rz Ry Rx @ R_ref`` and ``t_ref + dt``.
    """

    field: GradientField
    mesh: Mesh
    k: CameraIntrinsics
    reference: Pose
    ico: Icosphere | None = None
    vmap: VisibilityMap | None = None
    theta_sharp: float = DEFAULT_SHARP_ANGLE
    spacing: float = DEFAULT_SPACING
    boundary_edges: bool = True
    diameter: float | None = None
    detector: ContourDetector | None = field(default=None, repr=False)
    interpolation: str = "cubic"

    def __post_init__(self):
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"interpolation must be one of {INTERPOLATIONS}")
        if self.detector is None:
            self.detector = ContourDetector(self.mesh, self.theta_sharp, self.boundary_edges)
        if self.diameter is None:
            self.diameter = model_diameter(self.mesh)
        self._v = np.ascontiguousarray(self.mesh.vertices)
        self._size = (self.field.width, self.field.height)
        self._cubic = self.interpolation == "cubic"
        self._gxy = spline_coefficients(self.field) if self._cubic else np.ascontiguousarray(self.field.gxy)
        self._visible_all = np.zeros(self.mesh.n_faces, dtype=bool)
        self._cos_sharp = float(np.cos(np.pi - self.theta_sharp))

    @classmethod
    def from_image(cls, img: GrayImage, mesh: Mesh, k: CameraIntrinsics, reference: Pose, **kw) -> "EnergyContext":
        return cls(gradient(img), mesh, k, reference, **kw)

    def with_field(self, field_: GradientField) -> "EnergyContext":
        """Same model and chart, different gradient field (shares the edge tables)."""
        return EnergyContext(field_, self.mesh, self.k, self.reference, self.ico, self.vmap,
                             self.theta_sharp, self.spacing, self.boundary_edges, self.diameter,
                             self.detector, self.interpolation)

    def rt(self, params) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(params, dtype=float)
        return rotation_from_euler(p[:3]) @ self.reference.rotation, self.reference.translation + p[3:6]

    def pose(self, params) -> Pose:
        return pose_from_params(params, self.reference)

    def invisible_mask(self, r: np.ndarray, t: np.ndarray) -> np.ndarray | None:
        if self.vmap is None or self.ico is None:
            return None
        d = -r.T @ t
        n = np.linalg.norm(d)
        if n == 0.0:
            return None
        f = _kernels.locate_face(self.ico.vertices, self.ico.faces, self.ico.vf_ptr, self.ico.vf_idx, d / n)
        if f < 0:
            raise NoFaceHit(f"no icosphere face along {d / n}")
        tri = self.ico.faces[f]
        bits = self.vmap.bits[tri[0]] & self.vmap.bits[tri[1]] & self.vmap.bits[tri[2]]
        return np.unpackbits(bits, count=self.vmap.n_faces).astype(bool)

    def samples(self, params) -> ContourSamples:
        """Contour samples at ``params``; raises AllSamplesClipped when none land in the image."""
        r, t = self.rt(params)
        xc = self._v @ r.T + t
        segs = self.detector.detect(xc, self.invisible_mask(r, t))
        return sample_contour(segs, self.k, self.spacing, self._size)

    def energy(self, params) -> float:
        """Mean |grad I . n| over in-image contour samples; 0 when there are none.

        Each sample counts with the arc length it represents, so the mean follows a
        uniform density along the whole contour even though per-edge spacing varies.
        The gradient field is read through a cubic B-spline by default, which keeps
        the energy differentiable in the pose; ``interpolation="linear"`` uses bilinear.
        """
        return self.evaluate(params)[0]

    def evaluate(self, params) -> tuple[float, int]:
        """Energy and the number of contour samples that landed in the image."""
        r, t = self.rt(params)
        inv = self.invisible_mask(r, t)
        adj = self.detector.adjacency
        k = self.k
        total, weight, count = _kernels.energy_sum(
            self._v, self.mesh.faces, adj.p, adj.q, adj.face1, adj.face2,
            adj.boundary_p, adj.boundary_q, adj.boundary_face,
            self._visible_all if inv is None else inv, r, t,
            k.fx, k.fy, k.cx, k.cy, float(self.spacing), self._size[0], self._size[1],
            self._cos_sharp, self.boundary_edges, self._gxy, self._cubic)
        return (total / weight if weight > 0.0 else 0.0), int(count)

    def energy_reference(self, params) -> float:
        """Same value as :meth:`energy`, computed through the vectorized numpy route."""
        try:
            s = self.samples(params)
        except AllSamplesClipped:
            return 0.0
        g = sample_field(self.field, s.points, self.interpolation)
        return float(np.average(np.abs(np.einsum("ij,ij->i", g, s.normals)), weights=s.weights))

    def steps(self) -> np.ndarray:
        d = self.diameter
        return np.array([ROT_STEP] * 3 + [TRANS_STEP * d] * 3)

    def gradient(self, params, steps=None) -> np.ndarray:
        """Central finite differences of the energy in the 6-vector chart."""
        p = np.asarray(params, dtype=float)
        h = self.steps() if steps is None else np.asarray(steps, dtype=float)
        g = np.empty(6)
        for i in range(6):
            e = np.zeros(6)
            e[i] = h[i]
            g[i] = (self.energy(p + e) - self.energy(p - e)) / (2.0 * h[i])
        return g


def contour_energy(ctx: EnergyContext, params) -> float:
    return ctx.energy(params)


def energy_gradient(ctx: EnergyContext, params) -> np.ndarray:
    return ctx.gradient(params)
