"""Synthetic ground truth: a small z-buffered renderer and scripted object motions."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, Mesh, Pose, model_diameter, rotation_from_euler
from .image import GrayImage
from .raster import item_buffer

PATTERNS = ("xy", "z", "inplane", "outofplane", "free")
_ALIASES = {
    "xy": "xy", "xy-translation": "xy", "translation": "xy",
    "z": "z", "zoom": "z", "z-translation": "z",
    "inplane": "inplane", "in-plane-rotation": "inplane", "in-plane": "inplane",
    "outofplane": "outofplane", "out-of-plane-rotation": "outofplane", "out-of-plane": "outofplane",
    "free": "free", "free-motion": "free",
}


@dataclass(frozen=True)
class Appearance:
    """Object texture, background and lighting for :func:`render_frame`.

    ``texture`` is one of ``flat``, ``checker`` or ``noise`` (solid textures evaluated
    at model coordinates, so they move rigidly with the object). ``background`` is
    ``flat``, ``gradient`` or ``noise``.
    """

    texture: str = "flat"
    albedo: float = 0.8
    texture_contrast: float = 0.5
    texture_scale: float = 0.15
    background: str = "flat"
    background_level: float = 0.15
    background_contrast: float = 0.2
    background_scale: float = 24.0
    light_dir: tuple = (0.4, 0.5, 1.0)
    ambient: float = 0.35
    diffuse: float = 0.65
    flash_period: int = 0
    flash_low: float = 0.4
    light_orbit_deg: float = 0.0
    noise_sigma: float = 0.0
    supersample: int = 1
    seed: int = 0

    def light_scale(self, frame: int) -> float:
        if self.flash_period > 0 and (frame // self.flash_period) % 2 == 1:
            return self.flash_low
        return 1.0

    def light_direction(self, frame: int) -> np.ndarray:
        d = np.asarray(self.light_dir, dtype=float)
        if self.light_orbit_deg:
            a = math.radians(self.light_orbit_deg * frame)
            c, s = math.cos(a), math.sin(a)
            d = np.array([c * d[0] - s * d[1], s * d[0] + c * d[1], d[2]])
        return d / np.linalg.norm(d)


def _lattice_noise(coords: np.ndarray, seed: int) -> np.ndarray:
    """Smooth value noise in [0, 1] on an integer lattice (any dimension up to 3)."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(256)
    table = rng.random(256)
    dim = coords.shape[-1]
    base = np.floor(coords).astype(np.int64)
    frac = coords - base
    smooth = frac * frac * (3.0 - 2.0 * frac)
    out = np.zeros(coords.shape[:-1])
    for corner in range(1 << dim):
        offs = [(corner >> k) & 1 for k in range(dim)]
        h = np.zeros(coords.shape[:-1], dtype=np.int64)
        w = np.ones(coords.shape[:-1])
        for k in range(dim):
            h = perm[(h + base[..., k] + offs[k]) & 255]
            w = w * (smooth[..., k] if offs[k] else 1.0 - smooth[..., k])
        out += w * table[h]
    return out


def _background(app: Appearance, width: int, height: int) -> np.ndarray:
    if app.background == "flat":
        return np.full((height, width), app.background_level)
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    if app.background == "gradient":
        ramp = (xs / max(width - 1, 1) + ys / max(height - 1, 1)) / 2.0
        return app.background_level + app.background_contrast * (ramp - 0.5)
    if app.background == "noise":
        coords = np.stack([xs / app.background_scale, ys / app.background_scale], axis=-1)
        n = _lattice_noise(coords, app.seed + 7919)
        n2 = _lattice_noise(coords * 2.7, app.seed + 104729)
        return app.background_level + app.background_contrast * (0.65 * n + 0.35 * n2 - 0.5) * 2.0
    raise ValueError(f"unknown background {app.background!r}")


def _albedo(app: Appearance, xm: np.ndarray) -> np.ndarray:
    if app.texture == "flat":
        return np.full(len(xm), app.albedo)
    s = xm / app.texture_scale
    if app.texture == "checker":
        parity = np.floor(s).astype(np.int64).sum(axis=1) % 2
        return app.albedo * (1.0 - app.texture_contrast * parity)
    if app.texture == "noise":
        n = 0.6 * _lattice_noise(s, app.seed) + 0.4 * _lattice_noise(s * 2.3, app.seed + 1)
        return app.albedo * (1.0 - app.texture_contrast * n)
    raise ValueError(f"unknown texture {app.texture!r}")


def _render_raw(mesh: Mesh, pose: Pose, k: CameraIntrinsics, app: Appearance,
                size: tuple[int, int], frame: int) -> np.ndarray:
    width, height = size
    img = _background(app, width, height)
    ids = item_buffer(mesh, pose, k, size, cull_back=True)
    ys, xs = np.nonzero(ids >= 0)
    if len(ys) == 0:
        return img
    fid = ids[ys, xs]
    xc = pose.apply(mesh.vertices)
    tri = mesh.faces[fid]
    a = xc[tri[:, 0]]
    n = np.cross(xc[tri[:, 1]] - a, xc[tri[:, 2]] - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    # camera ray through each covered pixel, intersected with its face plane
    ray = np.column_stack([(xs - k.cx) / k.fx, (ys - k.cy) / k.fy, np.ones(len(xs))])
    depth = np.einsum("ij,ij->i", n, a) / np.einsum("ij,ij->i", n, ray)
    xm = (ray * depth[:, None] - pose.translation) @ pose.rotation
    light = app.light_direction(frame)
    lambert = np.maximum(0.0, -(n @ light))
    shade = app.light_scale(frame) * (app.ambient + app.diffuse * lambert)
    img[ys, xs] = _albedo(app, xm) * shade
    return img


def render_frame(mesh: Mesh, pose: Pose, k: CameraIntrinsics, appearance: Appearance | None = None,
                 size: tuple[int, int] = (640, 480), frame: int = 0) -> GrayImage:
    """Render ``mesh`` at ``pose`` with flat Lambertian shading over the scripted background."""
    app = appearance or Appearance()
    s = int(app.supersample)
    if s > 1:
        ks = CameraIntrinsics(k.fx * s, k.fy * s, k.cx * s + (s - 1) / 2.0, k.cy * s + (s - 1) / 2.0)
        big = _render_raw(mesh, pose, ks, replace(app, background_scale=app.background_scale * s),
                          (size[0] * s, size[1] * s), frame)
        img = big.reshape(size[1], s, size[0], s).mean(axis=(1, 3))
    else:
        img = _render_raw(mesh, pose, k, app, size, frame)
    if app.noise_sigma > 0:
        rng = np.random.default_rng([app.seed, frame, 31337])
        img = img + rng.normal(0.0, app.noise_sigma, img.shape)
    return GrayImage(np.clip(img, 0.0, 1.0))


@dataclass(frozen=True)
class MotionScript:
    """Scripted motion: ``pattern`` at ``speed`` 1-5 for ``frames`` frames.

    ``amplitude`` is a fraction of the model diameter for translations. Rotation
    patterns turn by ``rot_step_deg * speed`` per frame.
    """

    pattern: str = "xy"
    speed: int = 1
    frames: int = 100
    amplitude: float = 0.3
    rot_step_deg: float = 0.6
    xy_step_deg: float = 1.5
    z_rate: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "pattern", _ALIASES.get(self.pattern, self.pattern))
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown motion pattern {self.pattern!r}")
        if not 1 <= self.speed <= 5:
            raise ValueError("speed level must be in 1..5")
        if self.frames < 1:
            raise ValueError("frames must be positive")

    @classmethod
    def parse(cls, text: str, frames: int = 100, **kw) -> "MotionScript":
        """Parse ``pattern[:speed]``, e.g. ``zoom:3``."""
        name, _, speed = text.partition(":")
        return cls(name, int(speed) if speed else 1, frames, **kw)


def default_start_pose(mesh: Mesh, k: CameraIntrinsics, size=(640, 480), fill: float = 0.3) -> Pose:
    """Pose that puts the model on the optical axis, tilted to show three sides."""
    d = model_diameter(mesh)
    dist = k.fx * d / (fill * size[0])
    return Pose(rotation_from_euler(np.radians([25.0, -35.0, 10.0])), [0.0, 0.0, dist])


def script_poses(script: MotionScript, start: Pose, diameter: float, seed: int = 0) -> list[Pose]:
    i = np.arange(script.frames, dtype=float)
    sp = script.speed
    r0, t0 = start.rotation, start.translation
    poses = []
    if script.pattern == "xy":
        rad = script.amplitude * diameter
        ang = np.radians(script.xy_step_deg) * sp * i
        for a in ang:
            poses.append(Pose(r0, t0 + rad * np.array([math.cos(a) - 1.0, math.sin(a), 0.0])))
    elif script.pattern == "z":
        phase = script.z_rate * sp * i
        tri = 1.0 - np.abs(np.mod(phase, 2.0) - 1.0)
        for z in tri:
            poses.append(Pose(r0, t0 - np.array([0.0, 0.0, script.amplitude * diameter * z])))
    elif script.pattern in ("inplane", "outofplane"):
        axis = 2 if script.pattern == "inplane" else 1
        for a in np.radians(script.rot_step_deg) * sp * i:
            e = np.zeros(3)
            e[axis] = a
            poses.append(Pose(rotation_from_euler(e) @ r0, t0))
    else:
        rng = np.random.default_rng(seed)
        freq = rng.uniform(0.5, 1.5, 6) * 0.02 * sp
        phase = rng.uniform(0, 2 * np.pi, 6)
        amp = np.concatenate([np.radians([15.0, 15.0, 15.0]),
                              script.amplitude * diameter * np.array([1.0, 1.0, 1.0])])
        for x in i:
            off = amp * (np.sin(freq * x + phase) - np.sin(phase))
            poses.append(Pose(rotation_from_euler(off[:3]) @ r0, t0 + off[3:]))
    return poses


def generate_sequence(mesh: Mesh, k: CameraIntrinsics, script: MotionScript,
                      appearance: Appearance | None = None, seed: int = 0,
                      size: tuple[int, int] = (640, 480), start: Pose | None = None):
    """Render a scripted sequence; returns ``(frames, ground_truth_poses)``."""
    start = start or default_start_pose(mesh, k, size)
    poses = script_poses(script, start, model_diameter(mesh), seed)
    app = appearance or Appearance(seed=seed)
    frames = [render_frame(mesh, p, k, app, size, frame=i) for i, p in enumerate(poses)]
    return frames, poses


def write_sequence(out_dir, frames, poses, k: CameraIntrinsics) -> None:
    from .io import save_camera, save_image, write_poses

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        save_image(f, out / f"frame_{i:06d}.png")
    write_poses(out / "gt.csv", poses)
    save_camera(k, out / "cam.json")
