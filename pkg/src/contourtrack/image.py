"""Grayscale frames, Gaussian blur, gradient fields and bilinear sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ImageTooSmall, OutOfDomain


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major intensities, nominally in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.array(self.data, dtype=float)
        if d.ndim != 2:
            raise ValueError(f"image must be 2D, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("image contains non-finite values")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height


@dataclass(frozen=True, eq=False)
class GradientField:
    """Per-pixel partial derivatives; ``gxy[y, x] == (gx, gy)``."""

    gxy: np.ndarray

    @property
    def gx(self) -> np.ndarray:
        return self.gxy[..., 0]

    @property
    def gy(self) -> np.ndarray:
        return self.gxy[..., 1]

    @property
    def width(self) -> int:
        return self.gxy.shape[1]

    @property
    def height(self) -> int:
        return self.gxy.shape[0]


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_axis(a: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    p = np.pad(a, pad, mode="edge")
    n = a.shape[axis]
    out = np.zeros_like(a)
    for i, w in enumerate(kernel):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(i, i + n)
        out += w * p[tuple(sl)]
    return out


def gaussian_blur(img: GrayImage, sigma: float) -> GrayImage:
    """Separable Gaussian blur, radius ceil(3 sigma), edge-replicated borders."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    k = gaussian_kernel(sigma)
    return GrayImage(_filter_axis(_filter_axis(img.data, k, 1), k, 0))


def gradient(img: GrayImage) -> GradientField:
    """Central differences inside, one-sided differences on the border."""
    if img.width < 3 or img.height < 3:
        raise ImageTooSmall(f"gradient needs at least 3x3 pixels, got {img.width}x{img.height}")
    gy, gx = np.gradient(img.data)
    gxy = np.stack([gx, gy], axis=-1)
    gxy.flags.writeable = False
    return GradientField(gxy)


def sample_bilinear(field: GradientField, p) -> np.ndarray:
    """Interpolated (gx, gy) at one sub-pixel location."""
    x, y = float(p[0]), float(p[1])
    if not (0.0 <= x <= field.width - 1 and 0.0 <= y <= field.height - 1):
        raise OutOfDomain(f"point ({x}, {y}) outside [0, {field.width - 1}] x [0, {field.height - 1}]")
    return sample_bilinear_many(field, np.array([[x, y]]))[0]


def in_domain(points: np.ndarray, width: int, height: int) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    return (x >= 0.0) & (x <= width - 1) & (y >= 0.0) & (y <= height - 1)


def sample_bilinear_many(field: GradientField, points: np.ndarray) -> np.ndarray:
    """Vectorized bilinear lookup; callers must pass in-domain points."""
    g = field.gxy
    h, w = g.shape[:2]
    x, y = points[:, 0], points[:, 1]
    x0 = np.minimum(np.floor(x).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 2)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    top = g[y0, x0] * (1.0 - fx) + g[y0, x0 + 1] * fx
    bot = g[y0 + 1, x0] * (1.0 - fx) + g[y0 + 1, x0 + 1] * fx
    return top * (1.0 - fy) + bot * fy
