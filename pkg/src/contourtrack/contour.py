"""Contour and sharp edge detection on a posed mesh, and sampling of the projected contour."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import AllSamplesClipped
from .geometry import CameraIntrinsics, Mesh, Pose, MIN_DEPTH

DEGENERATE_NORMAL = 1e-12
DEFAULT_SHARP_ANGLE = math.radians(45.0)
DEFAULT_SPACING = 8.0


class EdgeType(enum.IntEnum):
    OTHER = 0
    CONTOUR = 1
    SHARP = 2


def classify_edge(v1, v2, p, q, face1_invisible: bool, face2_invisible: bool,
                  theta_sharp: float = DEFAULT_SHARP_ANGLE) -> EdgeType:
    """Type of edge ``pq`` shared by faces ``(v1, q, p)`` and ``(v2, p, q)``.

    All points are in the camera frame (camera at the origin). A face is front when
    its outward normal points towards the camera. The edge is sharp when both faces
    are front and visible and the angle between the faces themselves (pi minus the
    angle between their normals) is at most ``theta_sharp``.
    """
    v1, v2, p, q = (np.asarray(x, dtype=float) for x in (v1, v2, p, q))
    n1 = np.cross(q - v1, p - v1)
    n2 = np.cross(p - v2, q - v2)
    l1, l2 = np.linalg.norm(n1), np.linalg.norm(n2)
    if l1 < DEGENERATE_NORMAL or l2 < DEGENERATE_NORMAL:
        return EdgeType.OTHER
    f1 = float(v1 @ n1) < 0.0
    f2 = float(v2 @ n2) < 0.0
    if (f1 and not f2 and not face1_invisible) or (f2 and not f1 and not face2_invisible):
        return EdgeType.CONTOUR
    if f1 and f2 and not face1_invisible and not face2_invisible:
        normal_angle = math.acos(min(1.0, max(-1.0, float(n1 @ n2) / (l1 * l2))))
        if normal_angle >= math.pi - theta_sharp:
            return EdgeType.SHARP
    return EdgeType.OTHER


@dataclass(frozen=True, eq=False)
class EdgeAdjacency:
    """Unique mesh edges with their adjacent faces.

    For two-face edge ``k`` the faces are ``face1[k] = (v1, q, p)`` and
    ``face2[k] = (v2, p, q)``, matching the counter-clockwise winding. Edges with a
    single face are listed separately as boundary edges.
    """

    p: np.ndarray
    q: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    face1: np.ndarray
    face2: np.ndarray
    boundary_p: np.ndarray
    boundary_q: np.ndarray
    boundary_face: np.ndarray
    n_nonmanifold: int = 0

    @property
    def n_edges(self) -> int:
        return len(self.p)

    @classmethod
    def build(cls, mesh: Mesh) -> "EdgeAdjacency":
        directed: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for fi, (a, b, c) in enumerate(mesh.faces.tolist()):
            for x, y, opp in ((a, b, c), (b, c, a), (c, a, b)):
                directed.setdefault((x, y), []).append((fi, opp))
        two, bnd = [], []
        nonmanifold = 0
        for (x, y), owners in directed.items():
            back = directed.get((y, x))
            if len(owners) != 1 or (back is not None and len(back) != 1):
                nonmanifold += 1
                continue
            fi, opp = owners[0]
            if back is None:
                bnd.append((x, y, fi))
            elif x < y:
                gi, gopp = back[0]
                # face fi holds p->q so it is face2 = (v2, p, q)
                two.append((x, y, gopp, opp, gi, fi))
        t = np.array(two, dtype=np.int64).reshape(-1, 6)
        b = np.array(bnd, dtype=np.int64).reshape(-1, 3)
        return cls(t[:, 0], t[:, 1], t[:, 2], t[:, 3], t[:, 4], t[:, 5],
                   b[:, 0], b[:, 1], b[:, 2], nonmanifold)


@dataclass(frozen=True, eq=False)
class ContourSegments:
    """Camera-frame edge segments tagged with their :class:`EdgeType`."""

    starts: np.ndarray
    ends: np.ndarray
    kinds: np.ndarray

    def __len__(self) -> int:
        return len(self.kinds)


@dataclass(frozen=True, eq=False)
class ContourSamples:
    """Sample points with unit normals; ``weights`` is the projected arc length
    (pixels) of the sub-interval each sample stands for."""

    points: np.ndarray
    normals: np.ndarray
    segment_index: np.ndarray
    weights: np.ndarray | None = None

    @property
    def count(self) -> int:
        return len(self.points)


class ContourDetector:
    """Edge classification for one mesh, vectorized over all edges."""

    def __init__(self, mesh: Mesh, theta_sharp: float = DEFAULT_SHARP_ANGLE,
                 boundary_edges: bool = True, adjacency: EdgeAdjacency | None = None):
        self.mesh = mesh
        self.adjacency = adjacency or EdgeAdjacency.build(mesh)
        self.theta_sharp = theta_sharp
        self.boundary_edges = boundary_edges
        self._cos_sharp = math.cos(math.pi - theta_sharp)

    def face_state(self, xc: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        f = self.mesh.faces
        a, b, c = xc[f[:, 0]], xc[f[:, 1]], xc[f[:, 2]]
        n = np.cross(b - a, c - a)
        length = np.sqrt(np.einsum("ij,ij->i", n, n))
        front = np.einsum("ij,ij->i", a, n) < 0.0
        return n, length, front

    def classify(self, xc: np.ndarray, invisible: np.ndarray | None) -> np.ndarray:
        """Edge types for camera-frame vertices ``xc`` (two-face edges only)."""
        adj = self.adjacency
        n, length, front = self.face_state(xc)
        ok = length >= DEGENERATE_NORMAL
        vis = ok if invisible is None else ok & ~invisible
        fv = front & vis
        f1, f2 = adj.face1, adj.face2
        both_ok = ok[f1] & ok[f2]
        fr1, fr2 = front[f1], front[f2]
        contour = both_ok & ((fv[f1] & ~fr2) | (fv[f2] & ~fr1))
        kinds = np.where(contour, EdgeType.CONTOUR, EdgeType.OTHER).astype(np.int8)
        cand = both_ok & fv[f1] & fv[f2]
        if cand.any():
            idx = np.flatnonzero(cand)
            cosang = np.einsum("ij,ij->i", n[f1[idx]], n[f2[idx]]) / (length[f1[idx]] * length[f2[idx]])
            sharp = np.clip(cosang, -1.0, 1.0) <= self._cos_sharp
            kinds[idx[sharp]] = EdgeType.SHARP
        return kinds

    def detect(self, xc: np.ndarray, invisible: np.ndarray | None = None) -> ContourSegments:
        adj = self.adjacency
        kinds = self.classify(xc, invisible)
        keep = kinds != EdgeType.OTHER
        starts, ends, out_kinds = [xc[adj.p[keep]]], [xc[adj.q[keep]]], [kinds[keep]]
        if self.boundary_edges and len(adj.boundary_face):
            n, length, front = self.face_state(xc)
            bf = adj.boundary_face
            good = front[bf] & (length[bf] >= DEGENERATE_NORMAL)
            if invisible is not None:
                good &= ~invisible[bf]
            starts.append(xc[adj.boundary_p[good]])
            ends.append(xc[adj.boundary_q[good]])
            out_kinds.append(np.full(int(good.sum()), EdgeType.CONTOUR, dtype=np.int8))
        return ContourSegments(np.concatenate(starts), np.concatenate(ends), np.concatenate(out_kinds))


def detect_contours(mesh: Mesh, pose: Pose, invisible=None, theta_sharp: float = DEFAULT_SHARP_ANGLE,
                    boundary_edges: bool = True, detector: ContourDetector | None = None) -> ContourSegments:
    """Contour and sharp edges of ``mesh`` at ``pose`` as camera-frame segments.

    ``invisible`` is either a boolean face mask or a collection of face ids.
    """
    detector = detector or ContourDetector(mesh, theta_sharp, boundary_edges)
    mask = None
    if invisible is not None:
        inv = np.asarray(invisible)
        if inv.dtype == bool and inv.shape == (mesh.n_faces,):
            mask = inv
        else:
            mask = np.zeros(mesh.n_faces, dtype=bool)
            mask[inv.astype(np.int64)] = True
    return detector.detect(pose.apply(mesh.vertices), mask)


def sample_contour(segments: ContourSegments, k: CameraIntrinsics, spacing: float = DEFAULT_SPACING,
                   size: tuple[int, int] | None = None) -> ContourSamples:
    """Project segments and place ``ceil(L / spacing)`` samples along each one.

    Samples sit at the centers of consecutive ``spacing``-long sub-intervals measured
    from the segment start; the last sub-interval holds the remainder. A sample's
    weight is its sub-interval length, so adding a sample as ``L`` grows past a
    multiple of ``spacing`` changes the weighted mean continuously. Each sample
    carries the unit left-hand normal of its projected segment. Samples
    outside ``[0, w-1] x [0, h-1]`` are discarded when ``size`` is given; segments
    touching the camera plane or projecting to a point are skipped.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    a3, b3 = segments.starts, segments.ends
    front = (a3[:, 2] > MIN_DEPTH) & (b3[:, 2] > MIN_DEPTH)
    a3, b3 = a3[front], b3[front]
    a = np.column_stack([k.fx * a3[:, 0] / a3[:, 2] + k.cx, k.fy * a3[:, 1] / a3[:, 2] + k.cy])
    b = np.column_stack([k.fx * b3[:, 0] / b3[:, 2] + k.cx, k.fy * b3[:, 1] / b3[:, 2] + k.cy])
    d = b - a
    length = np.hypot(d[:, 0], d[:, 1])
    good = length > 1e-12
    a, d, length = a[good], d[good], length[good]
    seg_ids = np.flatnonzero(front)[good]
    if len(a) == 0:
        raise AllSamplesClipped("no projectable contour segments")
    counts = np.maximum(1, np.ceil(length / spacing)).astype(np.int64)
    rep = np.repeat(np.arange(len(a)), counts)
    first = np.cumsum(counts) - counts
    lo = (np.arange(counts.sum()) - first[rep]) * spacing
    hi = np.minimum(length[rep], lo + spacing)
    frac = 0.5 * (lo + hi) / length[rep]
    points = a[rep] + frac[:, None] * d[rep]
    unit = d / length[:, None]
    normals = np.column_stack([-unit[:, 1], unit[:, 0]])[rep]
    weights = hi - lo
    if size is not None:
        w, h = size
        x, y = points[:, 0], points[:, 1]
        inside = (x >= 0.0) & (x <= w - 1) & (y >= 0.0) & (y <= h - 1)
        points, normals, rep, weights = points[inside], normals[inside], rep[inside], weights[inside]
    if len(points) == 0:
        raise AllSamplesClipped("every contour sample lies outside the image")
    return ContourSamples(points, normals, seg_ids[rep], weights)
