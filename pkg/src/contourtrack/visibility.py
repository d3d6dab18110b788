"""Offline face-visibility bake over icosphere view directions, and runtime lookup.

For every icosphere vertex ``u`` the mesh is rendered orthographically looking along
``-u``; faces that are back-facing or cover no pixel form the invisible set ``S_u``.
At runtime the direction from the model origin to the camera selects one icosphere
face ``(u1, u2, u3)`` and the pose's invisible set is ``S_u1 & S_u2 & S_u3``.
"""

from __future__ import annotations

import hashlib
import io
import logging
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DataError, DegenerateMeshWarning, LevelTooLarge, NoFaceHit
from .geometry import Mesh, Pose
from .raster import rasterize

log = logging.getLogger(__name__)

MAX_LEVEL = 6
SIDECAR_MAGIC = b"CVIS"
SIDECAR_VERSION = 1

_PHI = (1.0 + 5.0 ** 0.5) / 2.0
_ICO_VERTICES = [
    (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
    (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
    (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
]
_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


@dataclass(frozen=True, eq=False)
class Icosphere:
    vertices: np.ndarray
    faces: np.ndarray
    level: int

    def __post_init__(self):
        # CSR adjacency: faces incident to vertex i are vf_idx[vf_ptr[i]:vf_ptr[i + 1]]
        order = np.argsort(self.faces.reshape(-1), kind="stable")
        counts = np.bincount(self.faces.reshape(-1), minlength=len(self.vertices))
        object.__setattr__(self, "vf_ptr", np.concatenate([[0], np.cumsum(counts)]).astype(np.int64))
        object.__setattr__(self, "vf_idx", (order // 3).astype(np.int64))


def build_icosphere(level: int) -> Icosphere:
    """Icosahedron subdivided ``level`` times, every vertex pushed onto the unit sphere."""
    if level < 0:
        raise ValueError("level must be non-negative")
    if level > MAX_LEVEL:
        raise LevelTooLarge(f"icosphere level {level} exceeds {MAX_LEVEL}")
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in _ICO_VERTICES]
    faces = list(_ICO_FACES)
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            idx = cache.get(key)
            if idx is None:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                idx = cache[key] = len(verts) - 1
            return idx

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Icosphere(np.array(verts), np.array(faces, dtype=np.int64), level)


@dataclass(frozen=True, eq=False)
class VisibilityMap:
    """Per-icosphere-vertex sorted arrays of invisible mesh face ids."""

    level: int
    resolution: int
    n_faces: int
    sets: tuple
    mesh_hash: bytes = b""
    bits: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.bits is None:
            dense = np.zeros((len(self.sets), self.n_faces), dtype=bool)
            for i, s in enumerate(self.sets):
                dense[i, s] = True
            object.__setattr__(self, "bits", np.packbits(dense, axis=1))


def mesh_hash(mesh: Mesh) -> bytes:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(mesh.faces, dtype="<i8").tobytes())
    return h.digest()


def _view_basis(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(u, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(u, e1)


def invisible_from_direction(mesh: Mesh, u: np.ndarray, resolution: int,
                             normals: np.ndarray | None = None,
                             radius: float | None = None) -> np.ndarray:
    """Faces not seen by an orthographic camera looking along ``-u``."""
    v = mesh.vertices
    if normals is None:
        normals = mesh.face_normals()
    if radius is None:
        radius = float(np.linalg.norm(v, axis=1).max()) or 1.0
    e1, e2 = _view_basis(u)
    half = 0.5 * (resolution - 1)
    px = (v @ e1 / radius + 1.0) * half
    py = (v @ e2 / radius + 1.0) * half
    front = normals @ u > 0.0
    ids = rasterize(px, py, v @ u, mesh.faces, front, resolution, resolution)
    seen = np.zeros(mesh.n_faces, dtype=bool)
    seen[ids[ids >= 0]] = True
    return np.flatnonzero(~seen)


def bake_visibility(mesh: Mesh, ico: Icosphere, raster_resolution: int = 512,
                    threads: int = 1) -> VisibilityMap:
    """Render the mesh from every icosphere direction and collect invisible faces.

    The mesh must be centered on the origin. Zero-area faces are reported with a
    warning and end up invisible from every direction.
    """
    normals = mesh.face_normals()
    degenerate = np.linalg.norm(normals, axis=1) == 0.0
    if degenerate.any():
        warnings.warn(f"{int(degenerate.sum())} zero-area faces treated as invisible",
                      DegenerateMeshWarning, stacklevel=2)
    radius = float(np.linalg.norm(mesh.vertices, axis=1).max()) or 1.0

    def one(u):
        return invisible_from_direction(mesh, u, raster_resolution, normals, radius).astype(np.int64)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sets = tuple(pool.map(one, ico.vertices))
    else:
        sets = tuple(one(u) for u in ico.vertices)
    return VisibilityMap(ico.level, raster_resolution, mesh.n_faces, sets, mesh_hash(mesh))


def view_direction(pose: Pose) -> np.ndarray:
    """Unit direction from the model origin towards the camera, in model coordinates."""
    d = -pose.rotation.T @ pose.translation
    n = np.linalg.norm(d)
    if n == 0.0:
        raise NoFaceHit("camera sits at the model origin")
    return d / n


def locate_face(ico: Icosphere, d: np.ndarray) -> int:
    """Index of the icosphere face pierced by the ray from the origin along ``d``."""
    f = _kernels.locate_face(ico.vertices, ico.faces, ico.vf_ptr, ico.vf_idx, np.asarray(d, dtype=float))
    if f < 0:
        raise NoFaceHit(f"no icosphere face along {d}")
    return int(f)


def invisible_mask_for_pose(pose: Pose, ico: Icosphere, vmap: VisibilityMap) -> np.ndarray:
    tri = ico.faces[locate_face(ico, view_direction(pose))]
    bits = vmap.bits[tri[0]] & vmap.bits[tri[1]] & vmap.bits[tri[2]]
    return np.unpackbits(bits, count=vmap.n_faces).astype(bool)


def invisible_set_for_pose(pose: Pose, ico: Icosphere, vmap: VisibilityMap) -> np.ndarray:
    """Sorted face ids likely hidden at ``pose`` (intersection over the pierced face's corners)."""
    return np.flatnonzero(invisible_mask_for_pose(pose, ico, vmap))


# -- sidecar file -------------------------------------------------------------

def _write_varint(buf: io.BytesIO, n: int) -> None:
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            buf.write(bytes((byte | 0x80,)))
        else:
            buf.write(bytes((byte,)))
            return


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    shift = result = 0
    while True:
        if pos >= len(data):
            raise DataError("truncated visibility sidecar")
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def save_visibility(vmap: VisibilityMap, path) -> None:
    """Write ``CVIS`` sidecar: header then per-vertex varint delta lists."""
    buf = io.BytesIO()
    buf.write(SIDECAR_MAGIC)
    buf.write(struct.pack("<I", SIDECAR_VERSION))
    buf.write(vmap.mesh_hash.ljust(32, b"\0")[:32])
    buf.write(struct.pack("<II", vmap.level, vmap.resolution))
    for s in vmap.sets:
        _write_varint(buf, len(s))
        prev = 0
        for x in s:
            _write_varint(buf, int(x) - prev)
            prev = int(x)
    Path(path).write_bytes(buf.getvalue())


def load_visibility(path, n_faces: int) -> VisibilityMap:
    data = Path(path).read_bytes()
    if data[:4] != SIDECAR_MAGIC:
        raise DataError(f"{path}: not a visibility sidecar")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != SIDECAR_VERSION:
        raise DataError(f"{path}: unsupported sidecar version {version}")
    digest = data[8:40]
    level, resolution = struct.unpack_from("<II", data, 40)
    pos = 48
    n_vertices = 10 * 4 ** level + 2
    sets = []
    for _ in range(n_vertices):
        count, pos = _read_varint(data, pos)
        vals = np.empty(count, dtype=np.int64)
        acc = 0
        for i in range(count):
            delta, pos = _read_varint(data, pos)
            acc += delta
            vals[i] = acc
        if count and vals[-1] >= n_faces:
            raise DataError(f"{path}: face id {vals[-1]} out of range")
        sets.append(vals)
    return VisibilityMap(level, resolution, n_faces, tuple(sets), digest)


def sidecar_name(mesh: Mesh, level: int, resolution: int) -> str:
    return f"{mesh_hash(mesh).hex()[:16]}_L{level}_R{resolution}.cvis"


def load_or_bake(mesh: Mesh, ico: Icosphere, resolution: int, cache_dir=None,
                 threads: int = 1) -> VisibilityMap:
    """Reuse a cached sidecar whose hash, level and resolution match, else bake and store it."""
    path = None
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        path = cache_dir / sidecar_name(mesh, ico.level, resolution)
        if path.is_file():
            try:
                vmap = load_visibility(path, mesh.n_faces)
                if (vmap.mesh_hash == mesh_hash(mesh) and vmap.level == ico.level
                        and vmap.resolution == resolution):
                    return vmap
            except DataError as exc:
                log.warning("ignoring unreadable sidecar %s: %s", path, exc)
    vmap = bake_visibility(mesh, ico, resolution, threads=threads)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_visibility(vmap, path)
    return vmap
