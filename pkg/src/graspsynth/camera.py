"""Pinhole camera, viewpoint generation and depth rendering.

Pixel ``(row i, col j)`` has its center at ``(u, v) = (j, i)``. Depth images
store camera-frame Z in meters with 0 meaning no data.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, DegenerateObjectError, EmptyGeometryError
from .mesh import BoundingBall, TriangleMesh, bounding_ball_points

MIN_DEPTH = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def default(cls):
        return cls(fx=200.0, fy=200.0, cx=112.0, cy=112.0, width=224, height=224)

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-to-camera rigid transform: ``X_cam = R @ X_world + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @property
    def position(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points):
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def to_world(self, points):
        return (np.asarray(points, dtype=float) - self.translation) @ self.rotation

    def to_dict(self):
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["rotation"], dtype=float), np.asarray(d["translation"], dtype=float))


@dataclass(frozen=True, eq=False)
class DepthImage:
    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=float)
        if p.ndim != 2:
            raise ValueError("depth image must be 2-D")
        if not np.all(np.isfinite(p)):
            raise ValueError("depth image contains non-finite values")
        if np.any(p < 0):
            raise ValueError("depth values must be >= 0 (0 = invalid)")
        object.__setattr__(self, "pixels", p)

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def valid(self):
        return self.pixels > 0

    def copy(self):
        return DepthImage(self.pixels.copy())


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point cloud contains non-finite values")
        object.__setattr__(self, "points", p)

    def __len__(self):
        return len(self.points)


# --------------------------------------------------------------------------
# viewpoints


def look_at(eye, target, up=None) -> CameraPose:
    """Pose whose +Z axis points from ``eye`` toward ``target``."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z = z / np.linalg.norm(z)
    if up is None:
        up = np.array([0.0, 0.0, 1.0])
        if abs(z @ up) > 0.99:
            up = np.array([0.0, 1.0, 0.0])
    # image v points down, so camera y is opposite to up
    x = np.cross(z, -np.asarray(up, dtype=float))
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.vstack([x, y, z])
    return CameraPose(r, -r @ eye)


def icosahedron_face_directions():
    """Unit vectors toward the 20 face centers of a regular icosahedron."""
    phi = (1.0 + 5 ** 0.5) / 2.0
    verts = []
    for a, b in itertools.product((-1.0, 1.0), repeat=2):
        verts += [(0.0, a, b * phi), (a, b * phi, 0.0), (b * phi, 0.0, a)]
    verts = np.asarray(verts)
    # faces are the vertex triples with all three edges at the minimum length 2
    faces = []
    for i, j, k in itertools.combinations(range(12), 3):
        if all(abs(np.linalg.norm(verts[p] - verts[q]) - 2.0) < 1e-9 for p, q in ((i, j), (j, k), (i, k))):
            faces.append(verts[[i, j, k]].mean(axis=0))
    dirs = np.asarray(faces)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def viewpoint_pose(ball: BoundingBall, direction, distance) -> CameraPose:
    eye = ball.center + distance * np.asarray(direction, dtype=float)
    return look_at(eye, ball.center)


def sample_view_distance(radius, rng):
    return float(rng.uniform(np.sqrt(3.0) * radius, 2.0 * radius))


def icosahedron_viewpoints(ball: BoundingBall, rng: np.random.Generator) -> list:
    """20 poses on the icosahedron face directions, each looking at the ball center.

    Each camera's distance from the center is drawn from
    U(sqrt(3) r, 2 r) with r the ball radius.
    """
    if not ball.radius > 0:
        raise DegenerateObjectError("bounding ball radius must be positive")
    return [
        viewpoint_pose(ball, d, sample_view_distance(ball.radius, rng))
        for d in icosahedron_face_directions()
    ]


# --------------------------------------------------------------------------
# projection


def project_points(intr: CameraIntrinsics, pose: CameraPose, points):
    """Vectorized pinhole projection; returns (N, 3) of (u, v, Z)."""
    pc = pose.to_camera(np.atleast_2d(points))
    z = pc[:, 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCameraError("point at or behind the camera plane")
    u = intr.fx * pc[:, 0] / z + intr.cx
    v = intr.fy * pc[:, 1] / z + intr.cy
    return np.stack([u, v, z], axis=1)


def project_point(intr: CameraIntrinsics, pose: CameraPose, point):
    u, v, z = project_points(intr, pose, np.asarray(point, dtype=float)[None])[0]
    return float(u), float(v), float(z)


def pixel_rays(intr: CameraIntrinsics, us, vs):
    """Camera-frame ray directions (z = 1) through pixel coordinates."""
    return np.stack([(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us, dtype=float)], axis=-1)


# --------------------------------------------------------------------------
# rendering


def _ray_tri_depth(dirs, v0, v1, v2):
    """Depth of rays from the origin (dirs with z = 1) hitting one triangle."""
    e1 = v1 - v0
    e2 = v2 - v0
    p = np.cross(dirs, e2)
    det = p @ e1
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        tv = -v0
        u = (p @ tv) * inv
        q = np.cross(tv, e1)
        v = (dirs @ q) * inv
        t = (e2 @ q) * inv
    hit = (np.abs(det) > 1e-14) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > MIN_DEPTH)
    return np.where(hit, t, np.inf)


def render_depth(mesh: TriangleMesh, intr: CameraIntrinsics, pose: CameraPose) -> DepthImage:
    """Ray-cast depth image, one ray per pixel center.

    Triangles are visited one at a time and only the pixels inside their
    projected bounding box are intersected, which gives the same result as
    casting every ray against every face.
    """
    h, w = intr.height, intr.width
    zbuf = np.full(h * w, np.inf)
    if mesh is None or mesh.n_faces == 0:
        return DepthImage(np.zeros((h, w)))
    tri = pose.to_camera(mesh.vertices)[mesh.faces]
    # z = 1 ray direction per pixel: ray parameter t equals camera-frame Z
    jj, ii = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    all_dirs = pixel_rays(intr, jj.ravel(), ii.ravel())
    for f in range(len(tri)):
        v0, v1, v2 = tri[f]
        zs = tri[f, :, 2]
        if np.all(zs > MIN_DEPTH):
            u = intr.fx * tri[f, :, 0] / zs + intr.cx
            v = intr.fy * tri[f, :, 1] / zs + intr.cy
            j0 = max(int(np.ceil(u.min() - 1e-6)), 0)
            j1 = min(int(np.floor(u.max() + 1e-6)), w - 1)
            i0 = max(int(np.ceil(v.min() - 1e-6)), 0)
            i1 = min(int(np.floor(v.max() + 1e-6)), h - 1)
            if j0 > j1 or i0 > i1:
                continue
            rows = np.arange(i0, i1 + 1)
            cols = np.arange(j0, j1 + 1)
            idx = (rows[:, None] * w + cols[None, :]).ravel()
        elif np.all(zs <= MIN_DEPTH):
            continue
        else:
            idx = np.arange(h * w)
        t = _ray_tri_depth(all_dirs[idx], v0, v1, v2)
        zbuf[idx] = np.minimum(zbuf[idx], t)
    zbuf[~np.isfinite(zbuf)] = 0.0
    return DepthImage(zbuf.reshape(h, w))


def deproject(img: DepthImage, intr: CameraIntrinsics) -> PointCloud:
    """One camera-frame point per valid pixel."""
    ii, jj = np.nonzero(img.pixels > 0)
    z = img.pixels[ii, jj]
    x = (jj - intr.cx) * z / intr.fx
    y = (ii - intr.cy) * z / intr.fy
    return PointCloud(np.stack([x, y, z], axis=1))


def zbuffer_points(points_cam, intr: CameraIntrinsics) -> DepthImage:
    """Splat camera-frame points to their nearest pixel, keeping the nearest depth."""
    img = np.full(intr.height * intr.width, np.inf)
    p = np.asarray(points_cam, dtype=float).reshape(-1, 3)
    p = p[p[:, 2] > MIN_DEPTH]
    if len(p):
        u = np.rint(intr.fx * p[:, 0] / p[:, 2] + intr.cx).astype(np.int64)
        v = np.rint(intr.fy * p[:, 1] / p[:, 2] + intr.cy).astype(np.int64)
        ok = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
        np.minimum.at(img, v[ok] * intr.width + u[ok], p[ok, 2])
    img[~np.isfinite(img)] = 0.0
    return DepthImage(img.reshape(intr.height, intr.width))


def reproject_virtual(cloud: PointCloud, intr: CameraIntrinsics, rng: np.random.Generator):
    """Re-render a camera-frame cloud from a virtual camera at a normalized distance.

    The virtual camera keeps the original orientation and slides along the
    line of sight through the cloud's bounding-ball center until its distance
    to that center is drawn from U(sqrt(3) r, 2 r).

    Returns
    -------
    (DepthImage, CameraPose)
        The pose maps original camera-frame points to the virtual frame.
    """
    if cloud is None or len(cloud) == 0:
        raise EmptyGeometryError("cannot re-project an empty point cloud")
    ball = bounding_ball_points(cloud.points)
    d_new = sample_view_distance(ball.radius, rng) if ball.radius > 0 else 0.0
    c = ball.center
    c_norm = np.linalg.norm(c)
    axis = c / c_norm if c_norm > 0 else np.array([0.0, 0.0, 1.0])
    if ball.radius == 0:
        eye = np.zeros(3)
    else:
        eye = c - d_new * axis
    pose = CameraPose(np.eye(3), -eye)
    return zbuffer_points(pose.to_camera(cloud.points), intr), pose
