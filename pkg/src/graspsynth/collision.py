"""Collision scoring of a posed parallel-jaw gripper against segmented depth.

Each object is a depth image seen by one shared camera. Its signed
distance is projective: along the camera ray through a query point, the
distance to the observed surface is positive in front of it and negative
behind it, truncated at +-``trunc``. Queries that miss the object's
silhouette use the unsigned distance to its nearest observed point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .camera import CameraIntrinsics, CameraPose, DepthImage, deproject
from .errors import DegenerateGraspError
from .projection import Grasp6DoF, ImageGrasp, back_project
from .sampling import GripperModel

SWEEP_SPACING = 0.005
TIE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class _ObjectView:
    depth: np.ndarray
    tree: cKDTree


@dataclass(frozen=True, eq=False)
class SceneSDF:
    intrinsics: CameraIntrinsics
    pose: CameraPose
    trunc: float
    objects: tuple = ()

    def __len__(self):
        return len(self.objects)

    def signed_distance(self, points_world):
        """(n_objects, P) truncated signed distances for world-frame points."""
        pts = self.pose.to_camera(np.atleast_2d(points_world))
        out = np.empty((len(self.objects), len(pts)))
        intr = self.intrinsics
        z = pts[:, 2]
        front = z > 1e-9
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.rint(intr.fx * pts[:, 0] / z + intr.cx)
            v = np.rint(intr.fy * pts[:, 1] / z + intr.cy)
        inside = front & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
        ui = np.where(inside, u, 0).astype(np.int64)
        vi = np.where(inside, v, 0).astype(np.int64)
        for k, obj in enumerate(self.objects):
            d = obj.depth[vi, ui]
            on = inside & (d > 0)
            sd = np.empty(len(pts))
            sd[on] = d[on] - z[on]
            off = ~on
            if off.any():
                if obj.tree is None:
                    sd[off] = self.trunc
                else:
                    nn, _ = obj.tree.query(pts[off], distance_upper_bound=self.trunc)
                    sd[off] = nn
            out[k] = np.clip(sd, -self.trunc, self.trunc)
        return out


def build_scene(depths, intr: CameraIntrinsics, pose: CameraPose = None, trunc=0.1) -> SceneSDF:
    """Scene from per-object depth images sharing one camera."""
    pose = CameraPose.identity() if pose is None else pose
    objs = []
    for img in depths:
        img = img if isinstance(img, DepthImage) else DepthImage(img)
        cloud = deproject(img, intr).points
        tree = cKDTree(cloud) if len(cloud) else None
        objs.append(_ObjectView(img.pixels, tree))
    return SceneSDF(intr, pose, float(trunc), tuple(objs))


@dataclass(frozen=True, eq=False)
class GripperSweep:
    points: np.ndarray
    is_finger: np.ndarray
    fingertips: np.ndarray
    center: np.ndarray
    axis: np.ndarray
    approach: np.ndarray


def _box_lattice(lo, hi, spacing):
    axes = [np.linspace(a, b, max(2, int(math.ceil((b - a) / spacing - 1e-9)) + 1)) for a, b in zip(lo, hi)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([x.ravel() for x in g], axis=1)


def gripper_local_points(separation, gripper: GripperModel, spacing=SWEEP_SPACING):
    """Body points in the grasp frame (closing axis, approach, binormal).

    Fingertips sit at ``(+-separation / 2, 0, 0)``; fingers run back along
    -approach for ``jaw_length`` and a palm bar joins them.
    """
    t = gripper.finger_thickness
    half = 0.5 * separation
    depth = (-0.5 * t, 0.5 * t)
    f1 = _box_lattice((half, -gripper.jaw_length, depth[0]), (half + t, 0.0, depth[1]), spacing)
    f2 = _box_lattice((-half - t, -gripper.jaw_length, depth[0]), (-half, 0.0, depth[1]), spacing)
    palm = _box_lattice((-half - t, -gripper.jaw_length - t, depth[0]),
                        (half + t, -gripper.jaw_length, depth[1]), spacing)
    pts = np.vstack([f1, f2, palm])
    is_finger = np.concatenate([np.ones(len(f1) + len(f2), bool), np.zeros(len(palm), bool)])
    return pts, is_finger


def fk_gripper(g: ImageGrasp, beta, gripper: GripperModel, intr: CameraIntrinsics,
               pose: CameraPose, spacing=SWEEP_SPACING) -> GripperSweep:
    """Posed gripper body points for the 5-DoF grasp ``g`` rotated by ``beta`` degrees.

    At ``beta = 0`` the approach direction is the component of the camera
    viewing direction orthogonal to the grasp axis; ``beta`` turns the
    body about the grasp axis through the grasp center.
    """
    pair = back_project(g, intr, pose)
    c1, c2 = np.asarray(pair.c1), np.asarray(pair.c2)
    width = float(np.linalg.norm(c2 - c1))
    if not (np.all(np.isfinite([g.x, g.y, g.theta, g.gamma, g.z, g.w])) and width > 1e-9 and g.z > 0):
        raise DegenerateGraspError("grasp does not define a closing axis")
    center = 0.5 * (c1 + c2)
    axis = (c2 - c1) / width
    view = pose.rotation.T @ np.array([0.0, 0.0, 1.0])
    a0 = view - (view @ axis) * axis
    if np.linalg.norm(a0) < 1e-9:
        a0 = np.cross(axis, [1.0, 0.0, 0.0])
        if np.linalg.norm(a0) < 1e-9:
            a0 = np.cross(axis, [0.0, 1.0, 0.0])
    a0 /= np.linalg.norm(a0)
    b0 = np.cross(axis, a0)
    br = math.radians(float(beta) % 360.0)
    approach = math.cos(br) * a0 + math.sin(br) * b0
    binormal = np.cross(axis, approach)
    sep = min(width, gripper.max_width)
    local, is_finger = gripper_local_points(sep, gripper, spacing)
    frame = np.stack([axis, approach, binormal], axis=0)
    pts = center + local @ frame
    tips = center + np.array([[-0.5 * sep, 0, 0], [0.5 * sep, 0, 0]]) @ frame
    return GripperSweep(pts, is_finger, tips, center, axis, approach)


@dataclass(frozen=True)
class CollisionScore:
    value: float
    per_object: tuple = field(default_factory=tuple)


def collision_score(g: ImageGrasp, beta, scene: SceneSDF, gripper: GripperModel = GripperModel(),
                    target=None, sweep=None) -> CollisionScore:
    """Summed negative clearance ``sum_i -min_p SD_i(p)`` over sweep points ``p``.

    For the ``target`` object the finger points are left out, since the
    fingers are meant to touch it.
    """
    if len(scene) == 0:
        return CollisionScore(0.0, ())
    if sweep is None:
        sweep = fk_gripper(g, beta, gripper, scene.intrinsics, scene.pose)
    sd = scene.signed_distance(sweep.points)
    per = []
    for k in range(len(scene)):
        row = sd[k]
        if target is not None and k == target:
            row = row[~sweep.is_finger]
        per.append(float(-row.min()))
    return CollisionScore(float(sum(per)), tuple(per))


def beta_grid(grid_step):
    n = 360.0 / grid_step
    if grid_step <= 0 or abs(n - round(n)) > 1e-9:
        raise ValueError("grid_step must divide 360")
    return np.arange(int(round(n))) * float(grid_step)


def refine_beta(g: ImageGrasp, scene: SceneSDF, grid_step=5.0, gripper: GripperModel = GripperModel(),
                target=None):
    """Exhaustive search of the collision score over a beta grid.

    Returns ``(beta, score)``; among grid values within 1e-9 of the minimum
    the smallest beta wins. An empty scene gives ``(0.0, 0.0)``.
    """
    betas = beta_grid(grid_step)
    if len(scene) == 0:
        return 0.0, 0.0
    scores = np.array([collision_score(g, b, scene, gripper, target).value for b in betas])
    best = int(np.flatnonzero(scores <= scores.min() + TIE_TOL)[0])
    return float(betas[best]), float(scores[best])


@dataclass(frozen=True)
class RankEntry:
    object_id: int
    grasp: Grasp6DoF
    score: float


def rank_graspable(object_grasps, scene: SceneSDF, grid_step=5.0,
                   gripper: GripperModel = GripperModel()):
    """Order objects by their best collision-free grasp.

    ``object_grasps[i]`` lists candidate grasps for scene object ``i``. Each
    grasp gets its beta refined; only grasps with score < 0 (positive
    clearance) count. Returns ``(ranking, report)`` where ``report`` names
    objects left out for lack of a collision-free grasp.
    """
    ranking, report = [], []
    for obj, grasps in enumerate(object_grasps):
        best = None
        for g in grasps:
            beta, score = refine_beta(g, scene, grid_step, gripper, target=obj)
            if score < 0 and (best is None or score < best.score):
                best = RankEntry(obj, Grasp6DoF.from_image_grasp(g, beta), score)
        if best is None:
            report.append({"object": obj, "reason": "no collision-free grasp"})
        else:
            ranking.append(best)
    ranking.sort(key=lambda e: (e.score, e.object_id))
    return ranking, report
