"""Keypoint side of the pipeline: corners, pyramidal LK flow, mesh anchoring, PnP + RANSAC."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import NoConsensus, TooFewPoints
from .geometry import MIN_DEPTH, CameraIntrinsics, Mesh, Pose
from .image import GrayImage

log = logging.getLogger(__name__)

MIN_TRACKED = 8
MIN_INLIER_RATE = 0.3
BEHIND_PENALTY = 1e6


@dataclass
class TrackedPoints:
    """Parallel arrays: pixel ``uv``, anchored model point ``x`` and liveness."""

    uv: np.ndarray
    x: np.ndarray
    alive: np.ndarray

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=float).reshape(-1, 2)
        self.x = np.asarray(self.x, dtype=float).reshape(-1, 3)
        self.alive = np.asarray(self.alive, dtype=bool).reshape(-1)

    def __len__(self) -> int:
        return len(self.uv)

    @classmethod
    def empty(cls) -> "TrackedPoints":
        return cls(np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0, dtype=bool))

    def live(self) -> "TrackedPoints":
        return TrackedPoints(self.uv[self.alive], self.x[self.alive], self.alive[self.alive])

    def concat(self, other: "TrackedPoints") -> "TrackedPoints":
        return TrackedPoints(np.vstack([self.uv, other.uv]), np.vstack([self.x, other.x]),
                             np.concatenate([self.alive, other.alive]))


@dataclass
class PnPResult:
    pose: Pose
    inliers: np.ndarray
    inlier_rate: float
    avg_error: float


def klt_failed(n_tracked: int, inlier_rate: float) -> bool:
    return n_tracked < MIN_TRACKED or inlier_rate < MIN_INLIER_RATE


# -- corners ------------------------------------------------------------------

def corner_response(img: GrayImage, window: int = 5) -> np.ndarray:
    """Smaller eigenvalue of the structure tensor (Sobel derivatives).

    The tensor is summed over a ``window``-wide Gaussian-weighted patch; a flat box
    leaves a plateau at an ideal junction and the peak becomes ambiguous.
    """
    a = img.data
    gx = ndimage.sobel(a, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(a, axis=0, mode="nearest") / 8.0
    radius = window // 2
    sigma = max(radius / 2.0, 0.5)

    def win(x):
        return ndimage.gaussian_filter(x, sigma, mode="nearest", truncate=radius / sigma)

    sxx, syy, sxy = win(gx * gx), win(gy * gy), win(gx * gy)
    half_tr = 0.5 * (sxx + syy)
    return half_tr - np.sqrt(np.maximum(0.0, (0.5 * (sxx - syy)) ** 2 + sxy * sxy))


def detect_corners(img: GrayImage, mask: np.ndarray | None = None, max_n: int = 300,
                   min_distance: float = 8.0, quality: float = 0.01, window: int = 5) -> np.ndarray:
    """Shi-Tomasi corners as an ``(n, 2)`` array of ``(x, y)``, strongest first."""
    resp = corner_response(img, window)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != resp.shape:
            raise ValueError("mask must match the image shape")
        resp = np.where(mask, resp, 0.0)
    top = float(resp.max()) if resp.size else 0.0
    if top <= 1e-12 or max_n <= 0:
        return np.zeros((0, 2))
    r = int(np.ceil(min_distance))
    peaks = (resp >= quality * top) & (resp == ndimage.maximum_filter(resp, size=3, mode="nearest"))
    ys, xs = np.nonzero(peaks)
    order = np.argsort(-resp[ys, xs], kind="stable")
    taken = np.zeros(resp.shape, dtype=bool)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    disk = yy * yy + xx * xx < min_distance * min_distance
    h, w = resp.shape
    out = []
    for i in order:
        y, x = ys[i], xs[i]
        if taken[y, x]:
            continue
        out.append((x, y))
        if len(out) >= max_n:
            break
        y0, y1, x0, x1 = max(0, y - r), min(h, y + r + 1), max(0, x - r), min(w, x + r + 1)
        taken[y0:y1, x0:x1] |= disk[y0 - y + r:y1 - y + r, x0 - x + r:x1 - x + r]
    return np.array(out, dtype=float).reshape(-1, 2)


# -- pyramidal Lucas-Kanade ---------------------------------------------------

_PYR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _pyramid(a: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [a]
    for _ in range(levels - 1):
        s = ndimage.correlate1d(pyr[-1], _PYR_KERNEL, axis=0, mode="nearest")
        s = ndimage.correlate1d(s, _PYR_KERNEL, axis=1, mode="nearest")
        pyr.append(s[::2, ::2])
    return pyr


def _sample(a: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(a, [y.ravel(), x.ravel()], order=1, mode="nearest").reshape(x.shape)


def _inside(a: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = a.shape
    return ((x >= 0.0) & (x <= w - 1) & (y >= 0.0) & (y <= h - 1)).astype(float)


def track_flow(prev: GrayImage, nxt: GrayImage, pts, levels: int = 3, window: int = 15,
               max_iter: int = 30, eps: float = 0.01, min_eig: float = 1e-7,
               max_residual: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Track ``pts`` from ``prev`` into ``nxt``; returns new points and an ok mask.

    Window pixels that fall outside either frame are left out of the sums, so
    points near the border see only real image content. ``min_eig`` applies to
    the normal matrix averaged over the valid window pixels; ``max_residual`` to
    the mean absolute intensity difference over the final window (intensities in [0, 1]).
    """
    if prev.data.shape != nxt.data.shape:
        raise ValueError("frames differ in size")
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return np.zeros((0, 2)), np.zeros(0, dtype=bool)
    h, w = prev.data.shape
    pi, pj = _pyramid(prev.data, levels), _pyramid(nxt.data, levels)
    half = window // 2
    oy, ox = (g.ravel().astype(float) for g in np.mgrid[-half:half + 1, -half:half + 1])
    ok = np.ones(n, dtype=bool)
    guess = np.zeros((n, 2))
    for lvl in range(levels - 1, -1, -1):
        scale = 2.0 ** lvl
        img_i, img_j = pi[lvl], pj[lvl]
        gy_i, gx_i = np.gradient(img_i)
        p = pts / scale
        wx = p[:, :1] + ox
        wy = p[:, 1:] + oy
        mi = _inside(img_i, wx, wy)
        ti = _sample(img_i, wx, wy)
        ix = _sample(gx_i, wx, wy) * mi
        iy = _sample(gy_i, wx, wy) * mi
        v = np.zeros((n, 2))
        active = ok.copy()
        for it in range(max_iter):
            if not active.any():
                break
            idx = np.flatnonzero(active)
            d = guess[idx] + v[idx]
            qx, qy = wx[idx] + d[:, :1], wy[idx] + d[:, 1:]
            m = _inside(img_j, qx, qy)
            ax, ay = ix[idx] * m, iy[idx] * m
            gxx, gxy, gyy = (ax * ax).sum(1), (ax * ay).sum(1), (ay * ay).sum(1)
            if it == 0:
                cnt = np.maximum((m * mi[idx]).sum(1), 1.0)
                lam = 0.5 * (gxx + gyy) - np.sqrt(np.maximum(0.0, 0.25 * (gxx - gyy) ** 2 + gxy * gxy))
                weak = lam / cnt < min_eig
                ok[idx[weak]] = False
                active[idx[weak]] = False
            det = gxx * gyy - gxy * gxy
            safe = np.where(np.abs(det) > 0, det, 1.0)
            diff = ti[idx] - _sample(img_j, qx, qy)
            bx, by = (diff * ax).sum(1), (diff * ay).sum(1)
            ex = np.where(active[idx], (gyy * bx - gxy * by) / safe, 0.0)
            ey = np.where(active[idx], (gxx * by - gxy * bx) / safe, 0.0)
            v[idx, 0] += ex
            v[idx, 1] += ey
            active[idx[np.hypot(ex, ey) < eps]] = False
        guess = guess + v
        if lvl > 0:
            guess = guess * 2.0
    new = pts + guess
    ok &= np.all(np.isfinite(new), axis=1)
    ok &= (new[:, 0] >= 0) & (new[:, 0] <= w - 1) & (new[:, 1] >= 0) & (new[:, 1] <= h - 1)
    if ok.any():
        idx = np.flatnonzero(ok)
        wx, wy = pts[idx, :1] + ox, pts[idx, 1:] + oy
        qx, qy = new[idx, :1] + ox, new[idx, 1:] + oy
        m = _inside(prev.data, wx, wy) * _inside(nxt.data, qx, qy)
        res = (np.abs(_sample(nxt.data, qx, qy) - _sample(prev.data, wx, wy)) * m).sum(1)
        ok[idx[res > max_residual * np.maximum(m.sum(1), 1.0)]] = False
    return new, ok


# -- anchoring ----------------------------------------------------------------

def ray_mesh_hits(dirs: np.ndarray, tri: np.ndarray, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Nearest positive hit of rays from the origin along ``dirs`` (n, 3) with
    triangles ``tri`` (m, 3, 3). Returns (face index or -1, distance along the ray)."""
    n = len(dirs)
    best_f = np.full(n, -1, dtype=np.int64)
    best_t = np.full(n, np.inf)
    a, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    for s in range(0, len(tri), chunk):
        sl = slice(s, s + chunk)
        pv = np.cross(dirs[:, None, :], e2[None, sl])
        det = np.einsum("mk,nmk->nm", e1[sl], pv)
        good = np.abs(det) > 1e-14
        inv = np.where(good, 1.0 / np.where(good, det, 1.0), 0.0)
        tv = -a[sl][None]
        u = np.einsum("nmk,nmk->nm", tv, pv) * inv
        qv = np.cross(tv, e1[sl][None])
        v = np.einsum("nk,nmk->nm", dirs, qv) * inv
        t = np.einsum("mk,nmk->nm", e2[sl], qv) * inv
        hit = good & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1.0 + 1e-12) & (t > MIN_DEPTH)
        t = np.where(hit, t, np.inf)
        j = np.argmin(t, axis=1)
        tj = t[np.arange(n), j]
        better = tj < best_t
        best_t[better] = tj[better]
        best_f[better] = j[better] + s
    return best_f, best_t


def anchor_3d(pts, pose: Pose, k: CameraIntrinsics, mesh: Mesh) -> TrackedPoints:
    """Back-project pixels onto the nearest mesh surface; points whose ray misses are dropped."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return TrackedPoints.empty()
    dirs = np.column_stack([(pts[:, 0] - k.cx) / k.fx, (pts[:, 1] - k.cy) / k.fy, np.ones(len(pts))])
    tri = pose.apply(mesh.vertices)[mesh.faces]
    face, t = ray_mesh_hits(dirs, tri)
    keep = face >= 0
    xc = dirs[keep] * t[keep, None]
    xm = (xc - pose.translation) @ pose.rotation
    return TrackedPoints(pts[keep], xm, np.ones(int(keep.sum()), dtype=bool))


# -- PnP ----------------------------------------------------------------------

def reprojection_residuals(pose: Pose, x3d: np.ndarray, uv: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Per-point pixel distance; points at or behind the camera get a fixed large penalty."""
    xc = pose.apply(x3d)
    z = xc[:, 2]
    front = z > MIN_DEPTH
    zs = np.where(front, z, 1.0)
    proj = np.column_stack([k.fx * xc[:, 0] / zs + k.cx, k.fy * xc[:, 1] / zs + k.cy])
    return np.where(front, np.linalg.norm(proj - uv, axis=1), BEHIND_PENALTY)


def avg_reproj_error(pose: Pose, x3d, uv, k: CameraIntrinsics) -> float:
    x3d = np.asarray(x3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    if len(x3d) == 0:
        raise TooFewPoints("need at least one correspondence")
    return float(reprojection_residuals(pose, x3d, uv, k).mean())


def _bearings(uv: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    b = np.column_stack([(uv[:, 0] - k.cx) / k.fx, (uv[:, 1] - k.cy) / k.fy, np.ones(len(uv))])
    return b / np.linalg.norm(b, axis=1, keepdims=True)


def _absolute_orientation(src: np.ndarray, dst: np.ndarray) -> Pose | None:
    """Least-squares rigid map src -> dst (Kabsch)."""
    cs, cd = src.mean(0), dst.mean(0)
    u, _, vt = np.linalg.svd((dst - cd).T @ (src - cs))
    s = np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))])
    r = u @ s @ vt
    if not np.all(np.isfinite(r)):
        return None
    return Pose(r, cd - r @ cs)


def p3p(x3d: np.ndarray, bearings: np.ndarray) -> list[Pose]:
    """Grunert's three-point solutions (up to four poses)."""
    x1, x2, x3 = x3d
    j1, j2, j3 = bearings
    a2 = float(np.sum((x2 - x3) ** 2))
    b2 = float(np.sum((x1 - x3) ** 2))
    c2 = float(np.sum((x1 - x2) ** 2))
    if min(a2, b2, c2) < 1e-18:
        return []
    ca, cb, cg = float(j2 @ j3), float(j1 @ j3), float(j1 @ j2)
    amc = (a2 - c2) / b2
    apc = (a2 + c2) / b2
    coeffs = [
        (amc - 1.0) ** 2 - 4.0 * c2 / b2 * ca * ca,
        4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb),
        2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca
               - 4.0 * apc * ca * cb * cg + 2.0 * (b2 - a2) / b2 * cg * cg),
        4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg),
        (1.0 + amc) ** 2 - 4.0 * a2 / b2 * cg * cg,
    ]
    if not np.all(np.isfinite(coeffs)) or abs(coeffs[0]) < 1e-14:
        return []
    out = []
    for root in np.roots(coeffs):
        if abs(root.imag) > 1e-6 * max(1.0, abs(root.real)):
            continue
        v = root.real
        den = 2.0 * (cg - v * ca)
        if abs(den) < 1e-14:
            continue
        u = ((-1.0 + amc) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / den
        q = 1.0 + v * v - 2.0 * v * cb
        if q <= 0:
            continue
        s1 = np.sqrt(b2 / q)
        s2, s3 = u * s1, v * s1
        if s1 <= 0 or s2 <= 0 or s3 <= 0:
            continue
        pose = _absolute_orientation(x3d, np.array([s1 * j1, s2 * j2, s3 * j3]))
        if pose is not None:
            out.append(pose)
    return out


def _rigid(params: np.ndarray, base: Pose) -> Pose:
    r = Rotation.from_rotvec(params[:3]).as_matrix() @ base.rotation
    return Pose(r, base.translation + params[3:])


def refine_pnp(pose: Pose, x3d: np.ndarray, uv: np.ndarray, k: CameraIntrinsics,
               max_nfev: int = 100) -> Pose:
    """Levenberg-Marquardt on reprojection residuals; keeps ``pose`` if it would get worse."""
    if len(x3d) < 3:
        return pose

    def resid(p):
        xc = _rigid(p, pose).apply(x3d)
        z = np.where(np.abs(xc[:, 2]) > MIN_DEPTH, xc[:, 2], MIN_DEPTH)
        return np.concatenate([k.fx * xc[:, 0] / z + k.cx - uv[:, 0], k.fy * xc[:, 1] / z + k.cy - uv[:, 1]])

    method = "lm" if 2 * len(x3d) >= 6 else "trf"
    try:
        res = least_squares(resid, np.zeros(6), method=method, xtol=1e-15, ftol=1e-15, gtol=1e-15,
                            max_nfev=max_nfev * 7)
    except (ValueError, np.linalg.LinAlgError):
        return pose
    if not np.all(np.isfinite(res.x)):
        return pose
    cand = _rigid(res.x, pose)
    if avg_reproj_error(cand, x3d, uv, k) <= avg_reproj_error(pose, x3d, uv, k):
        return cand
    return pose


def solve_pnp_ransac(x3d, uv, k: CameraIntrinsics, seed: int = 0, iterations: int = 200,
                     threshold: float = 4.0, early_exit: float = 0.8,
                     min_inlier_rate: float = MIN_INLIER_RATE) -> PnPResult:
    """Robust pose from 2D-3D correspondences.

    Each hypothesis comes from three points (P3P) with the fourth sampled point
    picking among the up-to-four solutions. The best consensus set is refined.
    """
    x3d = np.asarray(x3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    n = len(x3d)
    if n < 4:
        raise TooFewPoints(f"PnP needs 4 correspondences, got {n}")
    if len(uv) != n:
        raise ValueError("point arrays differ in length")
    rng = np.random.default_rng(seed)
    bear = _bearings(uv, k)
    best_pose, best_inl = None, np.zeros(n, dtype=bool)
    for _ in range(iterations):
        idx = rng.choice(n, 4, replace=False)
        cands = p3p(x3d[idx[:3]], bear[idx[:3]])
        if not cands:
            continue
        err4 = [reprojection_residuals(c, x3d[idx], uv[idx], k).max() for c in cands]
        cand = cands[int(np.argmin(err4))]
        inl = reprojection_residuals(cand, x3d, uv, k) < threshold
        if inl.sum() > best_inl.sum():
            best_pose, best_inl = cand, inl
            if inl.mean() >= early_exit:
                break
    rate = float(best_inl.mean())
    if best_pose is None or rate < min_inlier_rate:
        raise NoConsensus(f"best inlier rate {rate:.3f} below {min_inlier_rate}", rate)
    pose = best_pose
    inl = best_inl
    for _ in range(3):
        pose = refine_pnp(pose, x3d[inl], uv[inl], k)
        new_inl = reprojection_residuals(pose, x3d, uv, k) < threshold
        if np.array_equal(new_inl, inl) or new_inl.sum() < 4:
            break
        inl = new_inl
    inliers = np.flatnonzero(inl)
    return PnPResult(pose, inliers, len(inliers) / n, avg_reproj_error(pose, x3d[inl], uv[inl], k))
