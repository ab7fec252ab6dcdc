import math

import numpy as np
import pytest

from graspsynth.camera import CameraIntrinsics, CameraPose, look_at
from graspsynth.errors import BehindCameraError, DegenerateProjectionError
from graspsynth.projection import (Grasp6DoF, ImageGrasp, back_project, box_height_for, filter_tilt,
                                   project_grasp, wrap_theta)
from graspsynth.sampling import ContactPair
from oracles import rz

ID = CameraPose.identity()


def _pair(a, b):
    return ContactPair(np.array(a, float), np.array(b, float))


def _random_pair(rng):
    mid = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(0.6, 1.5)])
    d = rng.normal(size=3)
    d[2] *= 0.3
    d *= rng.uniform(0.02, 0.08) / np.linalg.norm(d)
    return _pair(mid - d / 2, mid + d / 2)


def test_project_basic_example(intr100):
    g = project_grasp(_pair([0, -0.05, 1], [0, 0.05, 1]), intr100, ID)
    assert (g.x, g.y, g.theta, g.gamma, g.z) == pytest.approx((112, 112, 0, 0, 1.0), abs=1e-12)
    assert g.w == pytest.approx(10.0, abs=1e-12)
    assert g.h == 20.0


def test_project_swap_invariant(intr100):
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = _random_pair(rng)
        assert project_grasp(p, intr100, ID) == project_grasp(p.swapped(), intr100, ID)


def test_project_tilt_example(intr100):
    g = project_grasp(_pair([0, -0.05, 0.99], [0, 0.05, 1.01]), intr100, ID)
    assert g.z == pytest.approx(1.0, abs=1e-12)
    assert g.gamma == pytest.approx(math.degrees(math.atan(0.2)), abs=1e-9)
    assert g.gamma == pytest.approx(11.31, abs=0.005)


def test_project_pixel_gamma_switch(intr100):
    g = project_grasp(_pair([0, -0.05, 1.0], [0, 0.05, 1.0]), intr100, ID, gamma_pixel_w=True)
    assert g.gamma == 0.0
    g = project_grasp(_pair([0, -0.05, 0.99], [0, 0.05, 1.01]), intr100, ID, gamma_pixel_w=True)
    # literal formula: depth difference over pixel width
    assert g.gamma == pytest.approx(math.degrees(math.atan2(0.02, g.w)), abs=1e-12)


def test_project_errors(intr100):
    with pytest.raises(BehindCameraError):
        project_grasp(_pair([0, 0, -1], [0, 0.1, 1]), intr100, ID)
    with pytest.raises(DegenerateProjectionError):
        project_grasp(_pair([0, 0, 1], [0, 0, 2]), intr100, ID)


def test_project_horizontal_tie(intr100):
    g = project_grasp(_pair([0.05, 0, 1], [-0.05, 0, 1]), intr100, ID)
    assert g.theta == 90.0
    assert g.w == pytest.approx(10.0)


def test_project_properties_random(intr100):
    rng = np.random.default_rng(1)
    for _ in range(500):
        p = _random_pair(rng)
        g = project_grasp(p, intr100, ID)
        assert -90.0 <= g.theta <= 90.0
        assert g.z == pytest.approx(0.5 * (p.c1[2] + p.c2[2]), abs=1e-15)
        assert g.w > 0


def test_box_height_scales_with_resolution():
    assert box_height_for(CameraIntrinsics.default()) == 20.0
    assert box_height_for(CameraIntrinsics(100, 100, 224, 224, 448, 448)) == 40.0


def test_filter_tilt_closed_interval():
    gs = [ImageGrasp(0, 0, 0, gm, 1, 10) for gm in (0.0, 30.0, -30.0, 31.0, -30.5)]
    assert [g.gamma for g in filter_tilt(gs)] == [0.0, 30.0, -30.0]
    assert filter_tilt([]) == []


def test_back_project_example(intr100):
    g = project_grasp(_pair([0, -0.05, 1], [0, 0.05, 1]), intr100, ID)
    p = back_project(g, intr100, ID)
    assert np.allclose(p.c1, [0, -0.05, 1], atol=1e-6)
    assert np.allclose(p.c2, [0, 0.05, 1], atol=1e-6)
    assert p.n1 is None


def test_back_project_theta_90_horizontal(intr100):
    g = ImageGrasp(112, 112, 90.0, 0.0, 1.0, 10.0)
    p = back_project(g, intr100, ID)
    assert abs(p.c1[1] - p.c2[1]) < 1e-12
    assert abs(p.c2[0] - p.c1[0]) == pytest.approx(0.1, abs=1e-12)


def test_roundtrip_random_pose():
    intr = CameraIntrinsics.default()
    pose = look_at([0.3, -0.2, 0.5], [0, 0, 0])
    rng = np.random.default_rng(2)
    for _ in range(300):
        mid = rng.normal(0, 0.03, 3)
        d = rng.normal(size=3)
        d *= 0.06 / np.linalg.norm(d)
        g = project_grasp(_pair(mid - d / 2, mid + d / 2), intr, pose)
        h = project_grasp(back_project(g, intr, pose), intr, pose)
        assert (h.x, h.y, h.theta, h.z) == pytest.approx((g.x, g.y, g.theta, g.z), abs=1e-6)
        assert abs(h.gamma - g.gamma) <= 0.1


def test_camera_roll_rotates_theta(intr100):
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = _random_pair(rng)
        alpha = rng.uniform(-180, 180)
        # camera-frame coordinates turned by alpha about the optical axis
        rolled = CameraPose(rz(alpha), np.zeros(3))
        g0 = project_grasp(p, intr100, ID)
        g1 = project_grasp(p, intr100, rolled)
        expect, _ = wrap_theta(g0.theta - alpha, 0.0)
        diff = (g1.theta - expect + 90.0) % 180.0 - 90.0
        assert abs(diff) <= 1e-6
        assert g1.z == pytest.approx(g0.z, abs=1e-9)
        assert abs(g1.gamma) == pytest.approx(abs(g0.gamma), abs=1e-6)
        assert g1.w * g1.z == pytest.approx(g0.w * g0.z, rel=1e-6)


def test_wrap_theta():
    assert wrap_theta(100.0, 5.0) == (-80.0, -5.0)
    assert wrap_theta(-90.0, 5.0) == (90.0, -5.0)
    assert wrap_theta(45.0, 5.0) == (45.0, 5.0)


def test_grasp6dof_beta_wraps():
    g = ImageGrasp(1, 2, 3, 4, 0.5, 6)
    b = Grasp6DoF.from_image_grasp(g, 370.0)
    assert b.beta == pytest.approx(10.0)
    assert Grasp6DoF.from_image_grasp(g, -90.0).beta == 270.0
    assert b.x == 1 and b.w == 6


def test_to_box_axis_direction():
    b = ImageGrasp(50, 60, 0.0, 0.0, 1.0, 30.0).to_box()
    # theta 0 means the grasp axis points along +v
    assert b.theta == -90.0 and b.w == 30.0
    assert ImageGrasp(50, 60, 90.0, 0.0, 1.0, 30.0).to_box().theta == 0.0
