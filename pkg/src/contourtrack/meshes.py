"""Procedural test meshes, all centered on the origin with outward CCW faces."""

from __future__ import annotations

import numpy as np

from .geometry import Mesh


def cube(size: float = 1.0) -> Mesh:
    h = 0.5 * size
    v = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    # vertex index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # x = -h
        (4, 6, 7, 5),  # x = +h
        (0, 4, 5, 1),  # y = -h
        (2, 3, 7, 6),  # y = +h
        (0, 2, 6, 4),  # z = -h
        (1, 5, 7, 3),  # z = +h
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return Mesh(v, np.array(faces))


def torus(major: float = 1.0, minor: float = 0.4, n_major: int = 24, n_minor: int = 12) -> Mesh:
    u = np.arange(n_major) * 2 * np.pi / n_major
    w = np.arange(n_minor) * 2 * np.pi / n_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    ring = major + minor * np.cos(ww)
    v = np.stack([ring * np.cos(uu), ring * np.sin(uu), minor * np.sin(ww)], axis=-1).reshape(-1, 3)

    def idx(i, j):
        return (i % n_major) * n_minor + (j % n_minor)

    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            faces += [(a, b, c), (a, c, d)]
    return Mesh(v, np.array(faces))


def sphere(level: int = 2, radius: float = 1.0) -> Mesh:
    from .visibility import build_icosphere

    ico = build_icosphere(level)
    return Mesh(ico.vertices * radius, ico.faces)


def prism(apex_deg: float = 30.0, length: float = 1.0, height: float = 1.0) -> Mesh:
    """Triangular prism along z whose cross-section has an ``apex_deg`` angle at +y.

    The two faces meeting at the apex edge form a knife edge.
    """
    half = height * np.tan(np.radians(apex_deg) / 2.0)
    tri = np.array([[0.0, height], [-half, 0.0], [half, 0.0]])
    tri[:, 1] -= height / 2.0
    zs = (-length / 2.0, length / 2.0)
    v = np.array([[x, y, z] for z in zs for x, y in tri])
    # 0,1,2 at back (z-), 3,4,5 at front (z+); triangle (0,1,2) is CCW seen from +z
    faces = [
        (0, 2, 1), (3, 4, 5),              # caps
        (0, 1, 4), (0, 4, 3),              # apex-left side
        (1, 2, 5), (1, 5, 4),              # bottom
        (2, 0, 3), (2, 3, 5),              # right-apex side
    ]
    return Mesh(v, np.array(faces))


def single_triangle(z: float = 0.0) -> Mesh:
    """Triangle in the plane ``z`` facing -z (towards a camera at the origin looking +z)."""
    v = np.array([[-1.0, -1.0, z], [1.0, -1.0, z], [0.0, 1.0, z]])
    # CCW when viewed from -z
    return Mesh(v, np.array([[0, 2, 1]]))
