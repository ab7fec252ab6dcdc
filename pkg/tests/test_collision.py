import math

import numpy as np
import pytest

from graspsynth.camera import CameraPose, DepthImage
from graspsynth.collision import (beta_grid, build_scene, collision_score, fk_gripper, gripper_local_points,
                                  rank_graspable, refine_beta)
from graspsynth.errors import DegenerateGraspError
from graspsynth.projection import ImageGrasp
from graspsynth.sampling import GripperModel
from scenes import GRASP, INTR, axis_point_scene, fine_grid_oracle, wall_depth, wall_scene

GRIPPER = GripperModel()
ID = CameraPose.identity()


def _flat(z):
    return np.full((INTR.height, INTR.width), z)


# signed distance


def test_flat_wall_signed_distance():
    scene = build_scene([_flat(1.0)], INTR, trunc=0.5)
    sd = scene.signed_distance([[0, 0, 0.9], [0, 0, 1.1], [0, 0, 1.0], [0.05, -0.03, 1.0]])[0]
    assert sd[:2] == pytest.approx([0.1, -0.1], abs=1e-12)
    assert abs(sd[2]) <= 0.002 and abs(sd[3]) <= 0.002


def test_signed_distance_truncated_and_off_silhouette():
    d = np.zeros((224, 224))
    d[100:124, 100:124] = 1.0
    scene = build_scene([d], INTR, trunc=0.1)
    sd = scene.signed_distance([[0, 0, 0.5], [0, 0, 1.5], [0.5, 0, 1.0]])[0]
    assert sd.tolist() == [0.1, -0.1, 0.1]
    # just beside the patch: unsigned distance to its nearest observed point
    near = scene.signed_distance([[0.07, 0.0, 1.0]])[0][0]
    assert 0.0 < near < 0.02


# forward kinematics


def test_sweep_size_and_bounds():
    sw = fk_gripper(GRASP, 0.0, GRIPPER, INTR, ID)
    assert len(sw.points) >= 200
    local = (sw.points - sw.center) @ np.stack([sw.axis, sw.approach, np.cross(sw.axis, sw.approach)]).T
    half = 0.5 * min(0.05, GRIPPER.max_width) + GRIPPER.finger_thickness
    assert np.all(np.abs(local[:, 0]) <= half + 1e-12)
    assert np.all(local[:, 1] <= 1e-12)
    assert np.all(local[:, 1] >= -GRIPPER.jaw_length - GRIPPER.finger_thickness - 1e-12)


@pytest.mark.parametrize("beta", [0.0, 37.0, 180.0, 299.0])
def test_fingertips_centered_and_separated(beta):
    sw = fk_gripper(GRASP, beta, GRIPPER, INTR, ID)
    assert np.allclose(sw.fingertips.mean(axis=0), sw.center, atol=1e-12)
    assert np.allclose(sw.center, [0, 0, 0.5], atol=1e-6)
    assert np.linalg.norm(sw.fingertips[1] - sw.fingertips[0]) == pytest.approx(0.05, abs=1e-9)


def test_fingertip_separation_capped_by_gripper():
    wide = ImageGrasp(112.0, 112.0, 90.0, 0.0, 0.5, 60.0)  # 15 cm
    sw = fk_gripper(wide, 10.0, GRIPPER, INTR, ID)
    assert np.linalg.norm(sw.fingertips[1] - sw.fingertips[0]) == pytest.approx(GRIPPER.max_width, abs=1e-12)


def test_fk_periodic():
    a = fk_gripper(GRASP, 25.0, GRIPPER, INTR, ID).points
    b = fk_gripper(GRASP, 385.0, GRIPPER, INTR, ID).points
    assert np.allclose(a, b, atol=1e-9)


def test_beta_180_mirrors_palm_through_axis():
    a = fk_gripper(GRASP, 0.0, GRIPPER, INTR, ID)
    b = fk_gripper(GRASP, 180.0, GRIPPER, INTR, ID)
    # half turn about the axis: r -> 2 (r . n) n - r relative to the center, with n the axis
    n = a.axis
    rel = a.points - a.center
    mirrored = a.center + 2.0 * np.outer(rel @ n, n) - rel
    palm = ~a.is_finger
    assert np.allclose(np.sort(mirrored[palm], axis=0), np.sort(b.points[palm], axis=0), atol=1e-9)


def test_fk_degenerate():
    with pytest.raises(DegenerateGraspError):
        fk_gripper(ImageGrasp(112, 112, 0, 0, 0.5, 0.0), 0.0, GRIPPER, INTR, ID)


def test_local_points_spacing():
    pts, fing = gripper_local_points(0.05, GRIPPER, spacing=0.005)
    assert fing.sum() > 0 and (~fing).sum() > 0
    from scipy.spatial import cKDTree
    d, _ = cKDTree(pts).query(pts, k=2)
    assert d[:, 1].max() <= 0.005 + 1e-12


# scores


def test_far_object_gives_minus_trunc():
    scene = build_scene([_flat(2.0)], INTR, trunc=0.1)
    assert collision_score(GRASP, 0.0, scene).value == pytest.approx(-0.1)


def test_touching_surface_nonnegative():
    # table exactly at the fingertip depth
    scene = build_scene([_flat(0.5)], INTR, trunc=0.1)
    assert collision_score(GRASP, 0.0, scene).value >= 0.0


def test_empty_scene():
    scene = build_scene([], INTR, trunc=0.1)
    assert collision_score(GRASP, 10.0, scene).value == 0.0
    assert refine_beta(GRASP, scene) == (0.0, 0.0)


def test_score_periodic_in_beta():
    scene = wall_scene()
    for b in (0.0, 45.0, 211.0):
        assert collision_score(GRASP, b, scene, target=0).value == collision_score(GRASP, b + 360.0, scene,
                                                                                   target=0).value


def test_moving_scene_away_never_increases_score():
    prev = None
    for z in (0.52, 0.53, 0.55, 0.6, 0.7):
        s = collision_score(GRASP, 30.0, build_scene([_flat(z)], INTR, trunc=0.1)).value
        if prev is not None:
            assert s <= prev + 1e-6
        prev = s


def test_beta_grid():
    assert len(beta_grid(5.0)) == 72
    with pytest.raises(ValueError):
        beta_grid(7.0)


# refinement


def test_wall_scene_matches_fine_grid():
    scene = wall_scene()
    beta, score = refine_beta(GRASP, scene, 5.0, target=0)
    betas, scores = fine_grid_oracle(scene, GRASP, 0.5, target=0)
    best = betas[np.argmin(scores)]
    assert abs((beta - best + 180.0) % 360.0 - 180.0) <= 5.0
    radius = np.max(np.linalg.norm(fk_gripper(GRASP, 0.0, GRIPPER, INTR, ID).points - [0, 0, 0.5], axis=1))
    assert score <= scores.min() + 5.0 * radius * math.pi / 180.0


def test_wall_scene_palm_swings_away():
    scene = wall_scene()
    beta, _ = refine_beta(GRASP, scene, 5.0, target=0)
    sw = fk_gripper(GRASP, beta, GRIPPER, INTR, ID)
    palm_y = sw.points[~sw.is_finger][:, 1].mean()
    # the wall occupies camera-frame y > 0.01
    assert palm_y < -0.01


def test_symmetric_scene_returns_zero():
    scene = axis_point_scene()
    scores = [collision_score(GRASP, b, scene).value for b in beta_grid(5.0)]
    assert max(scores) - min(scores) <= 1e-6
    assert refine_beta(GRASP, scene, 5.0)[0] == 0.0


def test_refine_tie_break_smallest_beta():
    scene = build_scene([_flat(5.0)], INTR, trunc=0.1)
    assert refine_beta(GRASP, scene, 10.0) == (0.0, pytest.approx(-0.1))


# ranking


def _block(center_v, depth=0.5, half=6):
    d = np.zeros((224, 224))
    d[center_v - half:center_v + half, 112 - half:112 + half] = depth
    return d


def test_rank_isolated_vs_surrounded():
    free = _block(40)
    boxed = _block(170)
    # tall ring of clutter around the second object, nearer to the camera
    ring = np.zeros((224, 224))
    ring[140:200, 82:142] = 0.42
    ring[160:180, 102:122] = 0.0
    scene = build_scene([free, boxed, ring], INTR, trunc=0.1)
    g_free = [ImageGrasp(112.0, 40.0, 90.0, 0.0, 0.5, 20.0)]
    g_boxed = [ImageGrasp(112.0, 170.0, 90.0, 0.0, 0.5, 20.0)]
    ranking, report = rank_graspable([g_free, g_boxed, []], scene, grid_step=10.0)
    assert ranking and ranking[0].object_id == 0
    assert ranking[0].score < 0
    assert {r["object"] for r in report} >= {2}
    ids = [e.object_id for e in ranking] + [r["object"] for r in report]
    assert sorted(ids) == [0, 1, 2]


def test_rank_single_and_empty():
    scene = build_scene([_block(112)], INTR, trunc=0.1)
    g = [ImageGrasp(112.0, 112.0, 90.0, 0.0, 0.5, 20.0), ImageGrasp(112.0, 112.0, 0.0, 0.0, 0.5, 20.0)]
    ranking, report = rank_graspable([g], scene, grid_step=10.0)
    assert len(ranking) == 1 and report == []
    assert ranking[0].grasp.beta in set(beta_grid(10.0))
    assert rank_graspable([], scene) == ([], [])


def test_scene_from_depth_images():
    scene = build_scene([DepthImage(wall_depth())], INTR)
    assert len(scene) == 1
