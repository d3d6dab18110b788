from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contourtrack import meshes
from contourtrack.energy import EnergyContext, contour_energy, energy_gradient, sample_field
from contourtrack.geometry import CameraIntrinsics, Mesh, Pose
from contourtrack.image import GrayImage, gaussian_blur, gradient
from contourtrack.raster import footprint

from oracles import random_view_pose

K = CameraIntrinsics(600, 600, 320, 240)
SIZE = (640, 480)
FACE_ON = Pose(np.eye(3), [0, 0, 5.5])  # front face at depth 5: a 120 px square at x 260..380, y 180..300


def square_frame(shift_px=0.0, sigma=1.1):
    pose = Pose(np.eye(3), [shift_px * 5 / 600, 0, 5.5])
    img = GrayImage(footprint(meshes.cube(), pose, K, SIZE).astype(float))
    return gaussian_blur(img, sigma) if sigma else img


def ctx_for(img, pose=FACE_ON, mesh=None, **kw):
    return EnergyContext(gradient(img), mesh or meshes.cube(), K, pose, **kw)


def test_constant_frame_zero():
    ctx = ctx_for(GrayImage(np.full((480, 640), 0.3)))
    assert ctx.energy(np.zeros(6)) == 0.0
    assert contour_energy(ctx, [0.1, 0, 0, 0, 0.1, 0]) == 0.0


def test_offscreen_pose_zero():
    ctx = ctx_for(square_frame())
    assert ctx.evaluate([0, 0, 0, 50.0, 0, 0]) == (0.0, 0)
    assert ctx.energy_reference([0, 0, 0, 50.0, 0, 0]) == 0.0


def test_square_peak_beats_shifted_pose():
    ctx = ctx_for(square_frame())
    e0 = ctx.energy(np.zeros(6))
    # 10 px along the diagonal: an axis-aligned shift keeps two edges on the square
    step = 10 / math.sqrt(2) * 5 / 600
    e_shift = ctx.energy([0, 0, 0, step, step, 0])
    # oracle: mean |gx| or |gy| read straight off the central-difference field at the edges
    g = gradient(square_frame()).gxy
    xs = np.arange(260, 381)
    edge = np.concatenate([np.abs(g[180, xs, 1]), np.abs(g[300, xs, 1]),
                           np.abs(g[xs - 80, 260, 0]), np.abs(g[xs - 80, 380, 0])])
    assert e0 == pytest.approx(edge.mean(), rel=0.02)
    assert e0 >= 3 * e_shift


def test_normals_perpendicular_to_gradient_give_zero():
    yy, xx = np.mgrid[0:480, 0:640].astype(float)
    img = GrayImage(0.5 + 0.5 * np.cos(np.pi * (xx - 260) / 120) * np.cos(np.pi * (yy - 180) / 120))
    for interp in ("cubic", "linear"):
        ctx = ctx_for(img, interpolation=interp)
        e, n = ctx.evaluate(np.zeros(6))
        assert n == 60 and abs(e) < 1e-9


def test_translation_gradient_points_to_square():
    ctx = ctx_for(square_frame(shift_px=4.0))
    g = ctx.gradient(np.zeros(6))
    assert g[3] > 0
    assert energy_gradient(ctx, np.zeros(6))[3] == g[3]


def test_stationary_at_maximum():
    ctx = ctx_for(square_frame())
    d = ctx.diameter
    g0 = ctx.gradient(np.zeros(6))
    g_off = ctx.gradient([0, 0, 0, 3 * 5 / 600, 0, 0])
    # translation components vanish by symmetry; tolerance tied to the step size
    assert np.abs(g0[3:5]).max() < 0.05 * abs(g_off[3])
    assert np.abs(g0[3:5]).max() * 1e-3 * d < 1e-3


@pytest.mark.parametrize("alpha", [0.25, 3.0])
def test_intensity_scaling(alpha):
    img = square_frame()
    a = ctx_for(img).energy([0.01, -0.02, 0.03, 0.01, 0, 0])
    b = ctx_for(GrayImage(alpha * img.data)).energy([0.01, -0.02, 0.03, 0.01, 0, 0])
    assert b == pytest.approx(alpha * a, rel=1e-12)


def test_half_spacing_changes_mean_little():
    yy, xx = np.mgrid[0:480, 0:640].astype(float)
    img = GrayImage((xx + 2 * yy) / 2000.0)
    x = np.zeros(6)
    e8 = ctx_for(img, spacing=8.0).energy(x)
    e4 = ctx_for(img, spacing=4.0).energy(x)
    assert abs(e4 - e8) < 0.02 * e8


@pytest.fixture(scope="module")
def textured(cube, k):
    from contourtrack.synth import Appearance, default_start_pose, render_frame

    gt = default_start_pose(cube, k)
    app = Appearance(texture="noise", background="noise", seed=3)
    return gaussian_blur(render_frame(cube, gt, k, app), 1.1), gt


@pytest.mark.parametrize("interp", ["cubic", "linear"])
def test_kernel_matches_reference(textured, cube, k, ico4, cube_vmap, interp):
    img, gt = textured
    ctx = EnergyContext(gradient(img), cube, k, gt, ico4, cube_vmap, interpolation=interp)
    rng = np.random.default_rng(0)
    for _ in range(30):
        x = rng.uniform(-1, 1, 6) * [0.5, 0.5, 0.5, 0.3, 0.3, 0.6]
        assert ctx.energy(x) == pytest.approx(ctx.energy_reference(x), rel=1e-12, abs=1e-15)


def test_kernel_matches_reference_torus(torus, k, ico4, torus_vmap):
    rng = np.random.default_rng(1)
    img = gaussian_blur(GrayImage(rng.random((480, 640))), 2.0)
    for _ in range(10):
        pose = random_view_pose(rng, torus)
        ctx = EnergyContext(gradient(img), torus, k, pose, ico4, torus_vmap)
        assert ctx.energy(np.zeros(6)) == pytest.approx(ctx.energy_reference(np.zeros(6)), rel=1e-12)


def test_cubic_field_sampling_interpolates():
    rng = np.random.default_rng(2)
    f = gradient(GrayImage(rng.random((20, 30))))
    nodes = np.array([[0, 0], [29, 19], [7, 11]], float)
    assert np.allclose(sample_field(f, nodes), f.gxy[[0, 19, 11], [0, 29, 7]], atol=1e-12)
    assert np.allclose(sample_field(f, nodes, "linear"), f.gxy[[0, 19, 11], [0, 29, 7]], atol=1e-15)


def test_bad_interpolation_rejected():
    with pytest.raises(ValueError):
        ctx_for(square_frame(), interpolation="nearest")


@given(st.lists(st.floats(-0.6, 0.6), min_size=6, max_size=6))
def test_energy_non_negative(x):
    ctx = _shared_ctx()
    assert ctx.energy(x) >= 0.0


_CTX = []


def _shared_ctx():
    if not _CTX:
        _CTX.append(ctx_for(square_frame()))
    return _CTX[0]


def test_with_field_shares_chart():
    ctx = ctx_for(square_frame())
    other = ctx.with_field(gradient(square_frame(sigma=0)))
    assert other.detector is ctx.detector and other.reference is ctx.reference
    assert other.energy(np.zeros(6)) > ctx.energy(np.zeros(6))


def test_mesh_boundary_edges_sampled():
    tri = Mesh([[-1, -1, 0], [1, -1, 0], [0, 1, 0]], [[0, 2, 1]])
    img = GrayImage(np.random.default_rng(3).random((480, 640)))
    ctx = EnergyContext(gradient(img), tri, K, Pose(np.eye(3), [0, 0, 5]))
    assert ctx.evaluate(np.zeros(6))[1] > 0
    off = EnergyContext(gradient(img), tri, K, Pose(np.eye(3), [0, 0, 5]), boundary_edges=False)
    assert off.evaluate(np.zeros(6)) == (0.0, 0)


def test_gradient_step_sizes(cube):
    ctx = ctx_for(square_frame())
    assert np.allclose(ctx.steps(), [1e-3] * 3 + [1e-3 * math.sqrt(3)] * 3)
