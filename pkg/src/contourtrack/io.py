"""Readers and writers for meshes, poses, cameras and frames."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import CameraIntrinsics, Mesh, Pose
from .image import GrayImage

POSE_HEADER = ["frame"] + [f"r{i}{j}" for i in range(3) for j in range(3)] + ["tx", "ty", "tz"]


def load_obj(path) -> Mesh:
    """Read the ``v``/``f`` subset of Wavefront OBJ (1-based triangles only)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"mesh file not found: {path}")
    verts, faces = [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: bad vertex") from exc
            elif parts[0] == "f":
                idx = parts[1:]
                if len(idx) != 3:
                    raise DataError(f"{path}:{lineno}: only triangle faces are supported")
                try:
                    # tolerate v/vt/vn but keep only the position index
                    faces.append([int(tok.split("/")[0]) - 1 for tok in idx])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: bad face") from exc
    if not verts or not faces:
        raise DataError(f"{path}: no vertices or faces")
    return Mesh(np.array(verts), np.array(faces))


def save_obj(mesh: Mesh, path) -> None:
    with Path(path).open("w") as fh:
        for v in mesh.vertices:
            fh.write("v " + " ".join(repr(float(x)) for x in v) + "\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_camera(path) -> CameraIntrinsics:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"camera file not found: {path}")
    try:
        data = json.loads(path.read_text())
        return CameraIntrinsics(float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: camera JSON needs numeric fx, fy, cx, cy") from exc


def save_camera(k: CameraIntrinsics, path) -> None:
    Path(path).write_text(json.dumps({"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy}, indent=2) + "\n")


def format_pose_row(frame: int, pose: Pose) -> list[str]:
    values = list(pose.rotation.reshape(-1)) + list(pose.translation)
    return [str(frame)] + [repr(float(v)) for v in values]


def write_poses(path, poses: dict[int, Pose] | list[Pose]) -> None:
    items = poses.items() if isinstance(poses, dict) else enumerate(poses)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSE_HEADER)
        for frame, pose in items:
            w.writerow(format_pose_row(frame, pose))


def read_poses(path) -> dict[int, Pose]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"pose file not found: {path}")
    out: dict[int, Pose] = {}
    with path.open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip() == "frame":
                continue
            if len(row) != 13:
                raise DataError(f"{path}: pose rows need 13 columns, got {len(row)}")
            try:
                vals = [float(x) for x in row[1:]]
                pose = Pose(_orthonormalize(np.reshape(vals[:9], (3, 3))), vals[9:])
            except ValueError as exc:
                raise DataError(f"{path}: bad pose row for frame {row[0]}") from exc
            out[int(row[0])] = pose
    if not out:
        raise DataError(f"{path}: no poses")
    return out


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    # text round-trips can leave ~1e-16 drift; snap back onto SO(3)
    u, _, vt = np.linalg.svd(r)
    q = u @ vt
    if np.linalg.det(q) < 0:
        raise ValueError("rotation has negative determinant")
    if np.abs(q - r).max() > 1e-6:
        raise ValueError("rotation is not orthonormal")
    return q


def load_image(path) -> GrayImage:
    """Load a PNG or binary PGM as intensities in [0, 1]."""
    from PIL import Image

    path = Path(path)
    if not path.is_file():
        raise DataError(f"frame not found: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("RGB", "RGBA", "P"):
                rgb = np.asarray(im.convert("RGB"), dtype=float)
                arr = rgb @ np.array([0.299, 0.587, 0.114])
                scale = 255.0
            elif im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=float)
                scale = 65535.0
            else:
                arr = np.asarray(im.convert("L"), dtype=float)
                scale = 255.0
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return GrayImage(arr / scale)


def save_image(img: GrayImage, path) -> None:
    from PIL import Image

    arr = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def frame_paths(pattern: str, start: int = 0) -> list[Path]:
    """Expand a printf-style pattern (``dir/frame_%06d.png``) until the first gap."""
    paths = []
    i = start
    while True:
        p = Path(pattern % i)
        if not p.is_file():
            break
        paths.append(p)
        i += 1
    return paths
