from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from contourtrack import meshes
from contourtrack.geometry import CameraIntrinsics, model_diameter
from contourtrack.synth import Appearance, default_start_pose, render_frame
from contourtrack.visibility import bake_visibility, build_icosphere

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")

SIZE = (640, 480)


@pytest.fixture(scope="session")
def k():
    return CameraIntrinsics(600.0, 600.0, 319.5, 239.5)


@pytest.fixture(scope="session")
def cube():
    return meshes.cube()


@pytest.fixture(scope="session")
def torus():
    return meshes.torus()


@pytest.fixture(scope="session")
def ico4():
    return build_icosphere(4)


@pytest.fixture(scope="session")
def cube_vmap(cube, ico4):
    return bake_visibility(cube, ico4, 256)


@pytest.fixture(scope="session")
def torus_vmap(torus, ico4):
    return bake_visibility(torus, ico4, 256)


@pytest.fixture(scope="session")
def cube_scene(cube, k, cube_vmap, ico4):
    """Flat-shaded cube at the default start pose: (image, gt pose, diameter)."""
    gt = default_start_pose(cube, k, SIZE)
    img = render_frame(cube, gt, k, Appearance(), SIZE)
    return img, gt, model_diameter(cube)


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """``record(n, ok, detail)`` stores one summary line and asserts ``ok``."""

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
