"""Projection of 3D contact pairs to image-plane grasp labels."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .camera import CameraIntrinsics, CameraPose, project_points
from .errors import DegenerateProjectionError
from .sampling import ContactPair

TIE_EPS = 1e-9
DEFAULT_BOX_HEIGHT = 20.0
REFERENCE_WIDTH = 224
TILT_LIMIT = 30.0


@dataclass(frozen=True)
class ImageGrasp:
    """5-DoF image grasp plus the training box size.

    Angles in degrees, ``z`` in meters, ``x, y, w, h`` in pixels.
    """

    x: float
    y: float
    theta: float
    gamma: float
    z: float
    w: float
    h: float = DEFAULT_BOX_HEIGHT

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(d[k]) for k in ("x", "y", "theta", "gamma", "z", "w", "h")})

    def to_box(self):
        """Rotated box in ``(x, y, w, h, theta)`` form with ``w`` along the grasp axis.

        The grasp axis direction in (u, v) is (sin theta, cos theta), so the
        box angle measured from +u is ``90 - theta`` folded into [-90, 90).
        """
        from .rotated import RotatedBox

        ang = 90.0 - self.theta
        if ang >= 90.0:
            ang -= 180.0
        return RotatedBox(self.x, self.y, self.w, self.h, ang)


@dataclass(frozen=True)
class Grasp6DoF(ImageGrasp):
    beta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "beta", float(self.beta) % 360.0)

    @classmethod
    def from_image_grasp(cls, g: ImageGrasp, beta):
        d = asdict(g)
        d["beta"] = beta
        return cls(**d)


def box_height_for(intr: CameraIntrinsics):
    return DEFAULT_BOX_HEIGHT * intr.width / REFERENCE_WIDTH


def project_grasp(pair: ContactPair, intr: CameraIntrinsics, pose: CameraPose,
                  gamma_pixel_w=False, box_height=None) -> ImageGrasp:
    """Project a contact pair into an :class:`ImageGrasp`.

    Contacts are ordered so that the second has the larger ``v`` (ties:
    larger ``u``). ``theta = atan((u2 - u1) / (v2 - v1))`` lands in
    [-90, 90]. The tilt is ``atan((Z2 - Z1) / W)`` where ``W`` is the metric
    contact separation parallel to the image plane (so the tilt is the angle
    between the grasp axis and that plane), or the pixel width when
    ``gamma_pixel_w`` is set.
    """
    c = np.vstack([np.asarray(pair.c1, float), np.asarray(pair.c2, float)])
    (u1, v1, z1), (u2, v2, z2) = project_points(intr, pose, c)
    swap = v1 > v2 + TIE_EPS or (abs(v2 - v1) < TIE_EPS and u1 > u2)
    if swap:
        u1, v1, z1, u2, v2, z2 = u2, v2, z2, u1, v1, z1
    du, dv = u2 - u1, v2 - v1
    w = math.hypot(du, dv)
    if w < 1e-12:
        raise DegenerateProjectionError("contacts project to the same pixel")
    if abs(dv) < TIE_EPS:
        theta = 90.0
    else:
        theta = math.degrees(math.atan2(du, dv))
    if gamma_pixel_w:
        denom = w
    else:
        cam = pose.to_camera(c)
        denom = float(np.hypot(*(cam[1, :2] - cam[0, :2])))
    gamma = math.degrees(math.atan2(z2 - z1, denom))
    return ImageGrasp(
        x=float(0.5 * (u1 + u2)),
        y=float(0.5 * (v1 + v2)),
        theta=float(theta),
        gamma=float(gamma),
        z=float(0.5 * (z1 + z2)),
        w=float(w),
        h=box_height_for(intr) if box_height is None else float(box_height),
    )


def filter_tilt(grasps, limit=TILT_LIMIT) -> list:
    """Keep grasps whose tilt lies in the closed interval [-limit, limit]."""
    return [g for g in grasps if -limit <= g.gamma <= limit]


def _depth_split(z, tan_g, a, b):
    """Signed depth difference d = Z2 - Z1 satisfying d = tan_g * |z a + d b / 2|.

    ``a`` and ``b`` are the image-plane (x, y) parts of ``r2 - r1`` and
    ``r2 + r1`` for the two pixel rays.
    Solves the quadratic and keeps the root whose sign matches ``tan_g``.
    """
    if tan_g == 0.0:
        return 0.0
    t2 = tan_g * tan_g
    qa = 1.0 - t2 * (b @ b) / 4.0
    qb = -t2 * z * (a @ b)
    qc = -t2 * z * z * (a @ a)
    if abs(qa) < 1e-15:
        roots = [-qc / qb]
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc < 0:
            raise DegenerateProjectionError("tilt not realizable for this grasp")
        sq = math.sqrt(disc)
        # numerically stable pair of roots
        qq = -0.5 * (qb + math.copysign(sq, qb)) if qb != 0 else -0.5 * sq
        roots = [qq / qa, qc / qq] if qq != 0 else [0.0]
    for r in roots:
        if r != 0 and math.copysign(1.0, r) == math.copysign(1.0, tan_g):
            return float(r)
    raise DegenerateProjectionError("tilt not realizable for this grasp")


def back_project(g: ImageGrasp, intr: CameraIntrinsics, pose: CameraPose,
                 gamma_pixel_w=False) -> ContactPair:
    """Reconstruct world contact positions from an image grasp (normals unset)."""
    th = math.radians(g.theta)
    hu, hv = 0.5 * g.w * math.sin(th), 0.5 * g.w * math.cos(th)
    u1, v1 = g.x - hu, g.y - hv
    u2, v2 = g.x + hu, g.y + hv
    r1 = np.array([(u1 - intr.cx) / intr.fx, (v1 - intr.cy) / intr.fy, 1.0])
    r2 = np.array([(u2 - intr.cx) / intr.fx, (v2 - intr.cy) / intr.fy, 1.0])
    tan_g = math.tan(math.radians(g.gamma))
    if gamma_pixel_w:
        d = tan_g * g.w
    else:
        d = _depth_split(g.z, tan_g, (r2 - r1)[:2], (r2 + r1)[:2])
    z1, z2 = g.z - 0.5 * d, g.z + 0.5 * d
    cam = np.vstack([z1 * r1, z2 * r2])
    world = pose.to_world(cam)
    return ContactPair(world[0], world[1])


def wrap_theta(theta, gamma):
    """Fold ``theta`` into (-90, 90], flipping the tilt sign on every half turn."""
    while theta > 90.0:
        theta -= 180.0
        gamma = -gamma
    while theta <= -90.0:
        theta += 180.0
        gamma = -gamma
    return theta, gamma


def with_angles(g: ImageGrasp, theta, gamma, **changes):
    theta, gamma = wrap_theta(theta, gamma)
    return replace(g, theta=theta, gamma=gamma, **changes)
