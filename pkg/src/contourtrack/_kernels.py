"""Fused numba kernels for the energy hot path.

These mirror ``ContourDetector.detect`` + ``sample_contour`` + gradient lookup
step for step; tests check that both routes agree.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MIN_DEPTH = 1e-9
DEGENERATE_NORMAL = 1e-12


@njit(cache=True, nogil=True)
def _mirror(i, n):
    if i < 0:
        i = -i
    if i > n - 1:
        i = 2 * (n - 1) - i
    return i


@njit(cache=True, nogil=True)
def _bspline_weights(t, w):
    s = 1.0 - t
    w[0] = s * s * s / 6.0
    w[1] = (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0
    w[2] = (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0
    w[3] = t * t * t / 6.0


@njit(cache=True, nogil=True)
def sample_cubic(coef, x, y, out):
    """Cubic B-spline value at (x, y) from prefiltered coefficients (mirror borders)."""
    h = coef.shape[0]
    w = coef.shape[1]
    x0 = int(math.floor(x))
    y0 = int(math.floor(y))
    wx = np.empty(4)
    wy = np.empty(4)
    _bspline_weights(x - x0, wx)
    _bspline_weights(y - y0, wy)
    out[0] = 0.0
    out[1] = 0.0
    for j in range(4):
        yy = _mirror(y0 - 1 + j, h)
        for i in range(4):
            xx = _mirror(x0 - 1 + i, w)
            c = wy[j] * wx[i]
            out[0] += c * coef[yy, xx, 0]
            out[1] += c * coef[yy, xx, 1]


@njit(cache=True, nogil=True)
def _segment(ax3, ay3, az3, bx3, by3, bz3, fx, fy, cx, cy, spacing, width, height, gxy, cubic, acc):
    if az3 <= MIN_DEPTH or bz3 <= MIN_DEPTH:
        return
    ax = fx * ax3 / az3 + cx
    ay = fy * ay3 / az3 + cy
    bx = fx * bx3 / bz3 + cx
    by = fy * by3 / bz3 + cy
    dx = bx - ax
    dy = by - ay
    length = math.hypot(dx, dy)
    if length <= 1e-12:
        return
    cnt = max(1, int(math.ceil(length / spacing)))
    nx = -(dy / length)
    ny = dx / length
    wmax = width - 1
    hmax = height - 1
    g = np.empty(2)
    for i in range(cnt):
        lo = i * spacing
        hi = min(length, lo + spacing)
        weight = hi - lo
        frac = 0.5 * (lo + hi) / length
        x = ax + frac * dx
        y = ay + frac * dy
        if x < 0.0 or x > wmax or y < 0.0 or y > hmax:
            continue
        if cubic:
            sample_cubic(gxy, x, y, g)
            gx = g[0]
            gy = g[1]
        else:
            x0 = min(int(math.floor(x)), width - 2)
            y0 = min(int(math.floor(y)), height - 2)
            tx = x - x0
            ty = y - y0
            gx = ((gxy[y0, x0, 0] * (1.0 - tx) + gxy[y0, x0 + 1, 0] * tx) * (1.0 - ty)
                  + (gxy[y0 + 1, x0, 0] * (1.0 - tx) + gxy[y0 + 1, x0 + 1, 0] * tx) * ty)
            gy = ((gxy[y0, x0, 1] * (1.0 - tx) + gxy[y0, x0 + 1, 1] * tx) * (1.0 - ty)
                  + (gxy[y0 + 1, x0, 1] * (1.0 - tx) + gxy[y0 + 1, x0 + 1, 1] * tx) * ty)
        acc[0] += weight * abs(gx * nx + gy * ny)
        acc[1] += weight
        acc[2] += 1.0


@njit(cache=True, nogil=True)
def energy_sum(verts, faces, ep, eq, ef1, ef2, bp, bq, bf, invisible, rot, trans,
               fx, fy, cx, cy, spacing, width, height, cos_sharp, use_boundary, gxy, cubic):
    """Returns (arc-length weighted sum of |g . n|, total weight, in-image sample count)."""
    nv = verts.shape[0]
    xc = np.empty((nv, 3))
    for i in range(nv):
        for r in range(3):
            xc[i, r] = (rot[r, 0] * verts[i, 0] + rot[r, 1] * verts[i, 1]
                        + rot[r, 2] * verts[i, 2] + trans[r])
    nf = faces.shape[0]
    nrm = np.empty((nf, 3))
    length = np.empty(nf)
    front = np.empty(nf, dtype=np.bool_)
    for f in range(nf):
        a, b, c = faces[f, 0], faces[f, 1], faces[f, 2]
        ux = xc[b, 0] - xc[a, 0]
        uy = xc[b, 1] - xc[a, 1]
        uz = xc[b, 2] - xc[a, 2]
        vx = xc[c, 0] - xc[a, 0]
        vy = xc[c, 1] - xc[a, 1]
        vz = xc[c, 2] - xc[a, 2]
        n0 = uy * vz - uz * vy
        n1 = uz * vx - ux * vz
        n2 = ux * vy - uy * vx
        nrm[f, 0] = n0
        nrm[f, 1] = n1
        nrm[f, 2] = n2
        length[f] = math.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
        front[f] = xc[a, 0] * n0 + xc[a, 1] * n1 + xc[a, 2] * n2 < 0.0
    acc = np.zeros(3)
    for e in range(ep.shape[0]):
        f1 = ef1[e]
        f2 = ef2[e]
        if length[f1] < DEGENERATE_NORMAL or length[f2] < DEGENERATE_NORMAL:
            continue
        fr1 = front[f1]
        fr2 = front[f2]
        fv1 = fr1 and not invisible[f1]
        fv2 = fr2 and not invisible[f2]
        emit = (fv1 and not fr2) or (fv2 and not fr1)
        if not emit and fv1 and fv2:
            cosang = (nrm[f1, 0] * nrm[f2, 0] + nrm[f1, 1] * nrm[f2, 1]
                      + nrm[f1, 2] * nrm[f2, 2]) / (length[f1] * length[f2])
            cosang = min(1.0, max(-1.0, cosang))
            emit = cosang <= cos_sharp
        if emit:
            p = ep[e]
            q = eq[e]
            _segment(xc[p, 0], xc[p, 1], xc[p, 2], xc[q, 0], xc[q, 1], xc[q, 2],
                     fx, fy, cx, cy, spacing, width, height, gxy, cubic, acc)
    if use_boundary:
        for e in range(bp.shape[0]):
            f = bf[e]
            if front[f] and length[f] >= DEGENERATE_NORMAL and not invisible[f]:
                p = bp[e]
                q = bq[e]
                _segment(xc[p, 0], xc[p, 1], xc[p, 2], xc[q, 0], xc[q, 1], xc[q, 2],
                         fx, fy, cx, cy, spacing, width, height, gxy, cubic, acc)
    return acc[0], acc[1], acc[2]


@njit(cache=True, nogil=True)
def _ray_hits(tri_a, tri_b, tri_c, d):
    e1 = tri_b - tri_a
    e2 = tri_c - tri_a
    px = d[1] * e2[2] - d[2] * e2[1]
    py = d[2] * e2[0] - d[0] * e2[2]
    pz = d[0] * e2[1] - d[1] * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if abs(det) <= 1e-15:
        return False
    inv = 1.0 / det
    tx, ty, tz = -tri_a[0], -tri_a[1], -tri_a[2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -1e-12 or u > 1.0 + 1e-12:
        return False
    qx = ty * e1[2] - tz * e1[1]
    qy = tz * e1[0] - tx * e1[2]
    qz = tx * e1[1] - ty * e1[0]
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < -1e-12 or u + v > 1.0 + 1e-12:
        return False
    dist = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    return dist > 0.0


@njit(cache=True, nogil=True)
def locate_face(ico_vertices, ico_faces, vf_ptr, vf_idx, d):
    """Lowest-index icosphere face hit along ``d``; -1 if none."""
    best_v = 0
    best = -2.0
    for i in range(ico_vertices.shape[0]):
        s = ico_vertices[i, 0] * d[0] + ico_vertices[i, 1] * d[1] + ico_vertices[i, 2] * d[2]
        if s > best:
            best = s
            best_v = i
    found = -1
    for j in range(vf_ptr[best_v], vf_ptr[best_v + 1]):
        f = vf_idx[j]
        if found != -1 and f > found:
            continue
        if _ray_hits(ico_vertices[ico_faces[f, 0]], ico_vertices[ico_faces[f, 1]],
                     ico_vertices[ico_faces[f, 2]], d):
            found = f
    if found != -1:
        return found
    for f in range(ico_faces.shape[0]):
        if _ray_hits(ico_vertices[ico_faces[f, 0]], ico_vertices[ico_faces[f, 1]],
                     ico_vertices[ico_faces[f, 2]], d):
            return f
    return -1
