"""Triangle rasterization into an item buffer (per-pixel face id with depth test).

Pixel ``(x, y)`` is sampled at its center, which sits on integer coordinates, the
same convention the projection and the gradient field use. Coverage is inclusive
on triangle edges. Triangles with a vertex at or behind the camera plane are
skipped rather than clipped.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .geometry import CameraIntrinsics, Mesh, Pose, project_points

NEAR = 1e-6


@njit(cache=True, nogil=True)
def _rasterize(px, py, key, faces, active, ids, zbuf):
    h, w = ids.shape
    for f in range(faces.shape[0]):
        if not active[f]:
            continue
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        x0, y0, x1, y1, x2, y2 = px[i0], py[i0], px[i1], py[i1], px[i2], py[i2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        xmin = max(int(math.ceil(min(x0, x1, x2))), 0)
        xmax = min(int(math.floor(max(x0, x1, x2))), w - 1)
        ymin = max(int(math.ceil(min(y0, y1, y2))), 0)
        ymax = min(int(math.floor(max(y0, y1, y2))), h - 1)
        k0, k1, k2 = key[i0], key[i1], key[i2]
        inv = 1.0 / area
        for y in range(ymin, ymax + 1):
            for x in range(xmin, xmax + 1):
                b0 = ((x1 - x) * (y2 - y) - (x2 - x) * (y1 - y)) * inv
                b1 = ((x2 - x) * (y0 - y) - (x0 - x) * (y2 - y)) * inv
                b2 = 1.0 - b0 - b1
                if b0 >= -1e-12 and b1 >= -1e-12 and b2 >= -1e-12:
                    kk = b0 * k0 + b1 * k1 + b2 * k2
                    if kk > zbuf[y, x]:
                        zbuf[y, x] = kk
                        ids[y, x] = f


def rasterize(px: np.ndarray, py: np.ndarray, key: np.ndarray, faces: np.ndarray,
              active: np.ndarray, width: int, height: int) -> np.ndarray:
    """Item buffer for screen-space vertices; larger ``key`` means nearer. Empty pixels are -1."""
    ids = np.full((height, width), -1, dtype=np.int64)
    zbuf = np.full((height, width), -np.inf)
    _rasterize(np.ascontiguousarray(px, dtype=np.float64), np.ascontiguousarray(py, dtype=np.float64),
               np.ascontiguousarray(key, dtype=np.float64), np.ascontiguousarray(faces, dtype=np.int64),
               np.ascontiguousarray(active, dtype=np.bool_), ids, zbuf)
    return ids


def item_buffer(mesh: Mesh, pose: Pose, k: CameraIntrinsics, size: tuple[int, int],
                cull_back: bool = True) -> np.ndarray:
    """Perspective item buffer of ``mesh`` at ``pose``; perspective-correct depth via 1/z."""
    width, height = size
    xc = pose.apply(mesh.vertices)
    z = xc[:, 2]
    f = mesh.faces
    active = np.all(z[f] > NEAR, axis=1)
    if cull_back:
        a, b, c = xc[f[:, 0]], xc[f[:, 1]], xc[f[:, 2]]
        n = np.cross(b - a, c - a)
        active &= np.einsum("ij,ij->i", a, n) < 0.0
    safe_z = np.where(z > NEAR, z, 1.0)
    uv = project_points(k, np.column_stack([xc[:, :2], safe_z]))
    return rasterize(uv[:, 0], uv[:, 1], 1.0 / safe_z, f, active, width, height)


def footprint(mesh: Mesh, pose: Pose, k: CameraIntrinsics, size: tuple[int, int]) -> np.ndarray:
    """Boolean mask of pixels covered by the projected model."""
    return item_buffer(mesh, pose, k, size, cull_back=False) >= 0
