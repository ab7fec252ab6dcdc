"""Triangle mesh loading and geometric queries.

Meshes are immutable once built. All random draws go through a caller
supplied :class:`numpy.random.Generator`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import EmptyGeometryError, MalformedMeshError

log = logging.getLogger(__name__)

MIN_FACE_AREA = 1e-12
RAY_EPS = 1e-9


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Watertight triangle mesh with outward face normals.

    Use :meth:`from_arrays` to build one; it validates indices, drops
    degenerate faces and recomputes normals from the winding order.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray
    face_areas: np.ndarray

    @classmethod
    def from_arrays(cls, vertices, faces, source=None):
        v = np.asarray(vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(v) == 0 or len(f) == 0:
            raise EmptyGeometryError(f"mesh {source or ''} has no faces".strip())
        if not np.all(np.isfinite(v)):
            raise MalformedMeshError("non-finite vertex coordinate", path=source)
        if f.min() < 0 or f.max() >= len(v):
            raise MalformedMeshError("face index out of range", path=source)
        cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        norm = np.linalg.norm(cross, axis=1)
        area = 0.5 * norm
        keep = area > MIN_FACE_AREA
        if not np.all(keep):
            log.warning("dropping %d degenerate face(s) from %s", int((~keep).sum()), source or "mesh")
            f, cross, norm, area = f[keep], cross[keep], norm[keep], area[keep]
        if len(f) == 0:
            raise EmptyGeometryError("mesh has only degenerate faces")
        normals = cross / norm[:, None]
        return cls(_readonly(v), _readonly(f), _readonly(normals), _readonly(area))

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def triangles(self):
        """(F, 3, 3) array of triangle corner positions."""
        return self.vertices[self.faces]

    def transformed(self, rotation=None, translation=None, scale=1.0):
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=float).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=float)
        return TriangleMesh.from_arrays(v, self.faces)


@dataclass(frozen=True)
class BoundingBall:
    center: np.ndarray
    radius: float

    def contains(self, points, tol=1e-9):
        d = np.linalg.norm(np.atleast_2d(points) - self.center, axis=1)
        return bool(np.all(d <= self.radius + tol))


@dataclass(frozen=True)
class SurfaceSample:
    point: np.ndarray
    normal: np.ndarray
    face_id: int


class SurfaceSamples:
    """Batch of surface samples stored column-wise; iterates as SurfaceSample."""

    def __init__(self, points, normals, face_ids):
        self.points = points
        self.normals = normals
        self.face_ids = face_ids

    def __len__(self):
        return len(self.face_ids)

    def __getitem__(self, i) -> SurfaceSample:
        return SurfaceSample(self.points[i], self.normals[i], int(self.face_ids[i]))

    def __iter__(self) -> Iterator[SurfaceSample]:
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class RayHit:
    point: np.ndarray
    face_id: int
    distance: float


# --------------------------------------------------------------------------
# loading


def _parse_obj(path):
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "v":
                    if len(parts) < 4:
                        raise ValueError("vertex needs 3 coordinates")
                    verts.append([float(x) for x in parts[1:4]])
                elif tag == "f":
                    if len(parts) < 4:
                        raise ValueError("face needs at least 3 vertices")
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        # negative indices are relative to the vertices read so far
                        i = i - 1 if i > 0 else len(verts) + i
                        if i < 0 or i >= len(verts):
                            raise ValueError(f"face index {tok} out of range")
                        idx.append(i)
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
            except ValueError as exc:
                raise MalformedMeshError(str(exc), path=path, line=lineno) from None
    return verts, faces


def _parse_off(path):
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        lines = [(i, l.split("#", 1)[0].strip()) for i, l in enumerate(fh, start=1)]
    lines = [(i, l) for i, l in lines if l]
    if not lines:
        raise EmptyGeometryError(f"{path}: empty file")
    it = iter(lines)
    lineno, first = next(it)
    if not first.startswith("OFF"):
        raise MalformedMeshError("missing OFF header", path=path, line=lineno)
    rest = first[3:].split()
    try:
        if not rest:
            lineno, counts = next(it)
            rest = counts.split()
        nv, nf = int(rest[0]), int(rest[1])
    except (StopIteration, ValueError, IndexError):
        raise MalformedMeshError("bad counts line", path=path, line=lineno) from None
    verts, faces = [], []
    try:
        for _ in range(nv):
            lineno, l = next(it)
            verts.append([float(x) for x in l.split()[:3]])
            if len(verts[-1]) != 3:
                raise ValueError("vertex needs 3 coordinates")
        for _ in range(nf):
            lineno, l = next(it)
            tok = [int(x) for x in l.split()]
            n = tok[0]
            idx = tok[1 : 1 + n]
            if n < 3 or len(idx) != n:
                raise ValueError("bad face record")
            for i in idx:
                if i < 0 or i >= nv:
                    raise ValueError(f"face index {i} out of range")
            for k in range(1, n - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    except StopIteration:
        raise MalformedMeshError("unexpected end of file", path=path, line=lineno) from None
    except ValueError as exc:
        raise MalformedMeshError(str(exc), path=path, line=lineno) from None
    return verts, faces


def load_mesh(path, scale=1.0) -> TriangleMesh:
    """Load an OBJ or OFF file into a :class:`TriangleMesh`.

    Parameters
    ----------
    path : str or Path
        Mesh file; the format is chosen from the suffix.
    scale : float
        Multiplier applied to vertex coordinates (unit conversion).
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        verts, faces = _parse_obj(path)
    elif suffix == ".off":
        verts, faces = _parse_off(path)
    else:
        raise MalformedMeshError(f"unsupported mesh format {suffix!r}", path=path)
    if not verts or not faces:
        raise EmptyGeometryError(f"{path}: mesh has no vertices or faces")
    return TriangleMesh.from_arrays(np.asarray(verts) * float(scale), faces, source=str(path))


def save_obj(mesh: TriangleMesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def save_off(mesh: TriangleMesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(mesh.vertices)} {len(mesh.faces)} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


# --------------------------------------------------------------------------
# bounding ball


def bounding_ball_points(points, iterations=2000) -> BoundingBall:
    """Small enclosing ball of a point set.

    Ritter's two-pass ball seeds the center, which is then refined with
    Badoiu-Clarkson steps toward the farthest point. The radius is always
    the true max distance from the returned center, so containment is exact.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(p) == 0:
        raise EmptyGeometryError("cannot bound an empty point set")
    # Ritter: farthest from an arbitrary point, then farthest from that
    a = p[np.argmax(np.einsum("ij,ij->i", p - p[0], p - p[0]))]
    b = p[np.argmax(np.einsum("ij,ij->i", p - a, p - a))]
    center = 0.5 * (a + b)
    radius = 0.5 * np.linalg.norm(b - a)
    for q in p:
        d = np.linalg.norm(q - center)
        if d > radius:
            radius = 0.5 * (radius + d)
            center = center + (d - radius) / d * (q - center)
    best_c = center
    best_r = float(np.sqrt(np.max(np.einsum("ij,ij->i", p - center, p - center))))

    c = center.copy()
    for k in range(1, iterations + 1):
        d2 = np.einsum("ij,ij->i", p - c, p - c)
        far = p[np.argmax(d2)]
        c = c + (far - c) / (k + 1)
        if k % 50 == 0:
            r = float(np.sqrt(np.max(np.einsum("ij,ij->i", p - c, p - c))))
            if r < best_r:
                best_c, best_r = c.copy(), r
    return BoundingBall(center=np.asarray(best_c, dtype=float), radius=best_r)


def bounding_ball(mesh: TriangleMesh) -> BoundingBall:
    if mesh is None or len(mesh.vertices) == 0:
        raise EmptyGeometryError("mesh is empty")
    return bounding_ball_points(mesh.vertices)


# --------------------------------------------------------------------------
# sampling


def sample_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> SurfaceSamples:
    """Draw ``n`` points uniformly by area over the mesh surface."""
    if n < 1:
        raise ValueError("n must be >= 1")
    prob = mesh.face_areas / mesh.face_areas.sum()
    face_ids = rng.choice(mesh.n_faces, size=n, p=prob)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.triangles[face_ids]
    points = (
        (1.0 - r1)[:, None] * tri[:, 0]
        + (r1 * (1.0 - r2))[:, None] * tri[:, 1]
        + (r1 * r2)[:, None] * tri[:, 2]
    )
    return SurfaceSamples(points, mesh.face_normals[face_ids].copy(), face_ids)


# --------------------------------------------------------------------------
# ray casting


def ray_intersect_many(mesh: TriangleMesh, origins, directions, chunk=2048):
    """Nearest hit for a batch of rays.

    Returns
    -------
    distance : (R,) array, ``inf`` where the ray misses
    face_id : (R,) int array, -1 where the ray misses
    """
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    if len(o) == 1 and len(d) > 1:
        o = np.broadcast_to(o, d.shape)
    n_rays = len(d)
    tri = mesh.triangles
    v0 = tri[:, 0]
    e1 = tri[:, 1] - v0
    e2 = tri[:, 2] - v0
    best_t = np.full(n_rays, np.inf)
    best_f = np.full(n_rays, -1, dtype=np.int64)
    step = max(1, chunk * 256 // max(mesh.n_faces, 1))
    for s in range(0, n_rays, step):
        oo = o[s : s + step, None, :]
        dd = d[s : s + step, None, :]
        p = np.cross(dd, e2[None])
        det = np.einsum("rfk,fk->rf", p, e1)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tv = oo - v0[None]
        u = np.einsum("rfk,rfk->rf", tv, p) * inv
        q = np.cross(tv, e1[None])
        v = np.einsum("rfk,rfk->rf", dd, q) * inv
        t = np.einsum("fk,rfk->rf", e2, q) * inv
        hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > RAY_EPS)
        t = np.where(hit, t, np.inf)
        idx = np.argmin(t, axis=1)
        tmin = t[np.arange(len(idx)), idx]
        best_t[s : s + step] = tmin
        best_f[s : s + step] = np.where(np.isfinite(tmin), idx, -1)
    return best_t, best_f


def ray_intersect(mesh: TriangleMesh, origin, direction) -> Optional[RayHit]:
    """Nearest intersection of one ray with the mesh, or ``None``."""
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    t, f = ray_intersect_many(mesh, origin[None], direction[None])
    if f[0] < 0:
        return None
    return RayHit(point=origin + t[0] * direction, face_id=int(f[0]), distance=float(t[0]))


# --------------------------------------------------------------------------
# closest point


def _closest_on_triangles(p, a, b, c):
    """Closest points on triangles (a, b, c) to points p; all (N, 3).

    Region classification from Ericson, Real-Time Collision Detection 5.1.5.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom
        out = a + v_in[:, None] * ab + w_in[:, None] * ac

        # edge regions
        t_ab = d1 / (d1 - d3)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        out = np.where(m[:, None], a + t_ab[:, None] * ab, out)
        t_ac = d2 / (d2 - d6)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        out = np.where(m[:, None], a + t_ac[:, None] * ac, out)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        out = np.where(m[:, None], b + t_bc[:, None] * (c - b), out)

    # vertex regions take priority
    out = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, out)
    return out


def closest_points(mesh: TriangleMesh, points, chunk=200_000):
    """Nearest surface point for each query.

    Returns
    -------
    closest : (P, 3) array
    face_id : (P,) int array
    distance : (P,) array
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tri = mesh.triangles
    n_f = mesh.n_faces
    out = np.empty_like(pts)
    fid = np.empty(len(pts), dtype=np.int64)
    dist = np.empty(len(pts))
    step = max(1, chunk // n_f)
    for s in range(0, len(pts), step):
        q = pts[s : s + step]
        nq = len(q)
        qq = np.repeat(q, n_f, axis=0)
        tt = np.tile(tri, (nq, 1, 1))
        cp = _closest_on_triangles(qq, tt[:, 0], tt[:, 1], tt[:, 2]).reshape(nq, n_f, 3)
        d2 = np.einsum("qfk,qfk->qf", cp - q[:, None], cp - q[:, None])
        j = np.argmin(d2, axis=1)
        rows = np.arange(nq)
        out[s : s + step] = cp[rows, j]
        fid[s : s + step] = j
        dist[s : s + step] = np.sqrt(d2[rows, j])
    return out, fid, dist
