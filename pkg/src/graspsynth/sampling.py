"""Antipodal parallel-jaw grasp sampling and force-closure quality."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateGraspError
from .mesh import TriangleMesh, closest_points, ray_intersect_many, sample_surface

# hits closer than this to the ray origin belong to the starting face
_SELF_HIT = 1e-6


@dataclass(frozen=True)
class GripperModel:
    max_width: float = 0.085
    jaw_length: float = 0.04
    finger_thickness: float = 0.01
    friction_mu: float = 0.5

    def __post_init__(self):
        for name in ("max_width", "jaw_length", "finger_thickness", "friction_mu"):
            if not getattr(self, name) > 0:
                raise ValueError(f"gripper {name} must be positive")


@dataclass(frozen=True, eq=False)
class ContactPair:
    """Two contacts with inward unit normals (``None`` when unknown)."""

    c1: np.ndarray
    c2: np.ndarray
    n1: Optional[np.ndarray] = None
    n2: Optional[np.ndarray] = None

    @property
    def width(self):
        return float(np.linalg.norm(np.asarray(self.c2) - np.asarray(self.c1)))

    def swapped(self):
        return ContactPair(self.c2, self.c1, self.n2, self.n1)

    def to_dict(self):
        d = {"c1": np.asarray(self.c1).tolist(), "c2": np.asarray(self.c2).tolist()}
        if self.n1 is not None:
            d["n1"] = np.asarray(self.n1).tolist()
            d["n2"] = np.asarray(self.n2).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        n1 = d.get("n1")
        n2 = d.get("n2")
        return cls(np.asarray(d["c1"], float), np.asarray(d["c2"], float),
                   None if n1 is None else np.asarray(n1, float),
                   None if n2 is None else np.asarray(n2, float))


@dataclass(frozen=True)
class GraspQuality:
    score: float
    in_force_closure: bool


def _orthonormal_basis(n):
    """Two unit vectors spanning the plane orthogonal to each row of ``n``."""
    helper = np.where(np.abs(n[:, :1]) < 0.9, np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    a = np.cross(n, helper)
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = np.cross(n, a)
    return a, b


def sample_in_cone(axis, half_angle, rng):
    """Directions uniform over the spherical cap of ``half_angle`` around each axis row."""
    axis = np.atleast_2d(axis)
    n = len(axis)
    cos_t = 1.0 - rng.random(n) * (1.0 - math.cos(half_angle))
    sin_t = np.sqrt(np.clip(1.0 - cos_t ** 2, 0.0, None))
    phi = 2.0 * np.pi * rng.random(n)
    a, b = _orthonormal_basis(axis)
    return cos_t[:, None] * axis + sin_t[:, None] * (np.cos(phi)[:, None] * a + np.sin(phi)[:, None] * b)


def _fc_mask(c1, c2, n1, n2, mu):
    axis = c2 - c1
    length = np.linalg.norm(axis, axis=-1)
    ok = length >= 1e-9
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = axis / np.where(ok, length, 1.0)[..., None]
        cos1 = np.einsum("...k,...k->...", unit, n1)
        cos2 = -np.einsum("...k,...k->...", unit, n2)
    cos_lim = math.cos(math.atan(mu))
    return ok & (cos1 >= cos_lim - 1e-12) & (cos2 >= cos_lim - 1e-12)


def force_closure(pair: ContactPair, mu: float) -> bool:
    """Two-contact antipodal test: the contact line lies in both friction cones."""
    if not mu > 0:
        raise ValueError("friction coefficient must be positive")
    c1, c2 = np.asarray(pair.c1, float), np.asarray(pair.c2, float)
    if np.linalg.norm(c2 - c1) < 1e-9:
        raise DegenerateGraspError("coincident contacts")
    if pair.n1 is None or pair.n2 is None:
        raise DegenerateGraspError("contact normals are required")
    return bool(_fc_mask(c1, c2, np.asarray(pair.n1, float), np.asarray(pair.n2, float), mu))


def sample_antipodal(mesh: TriangleMesh, gripper: GripperModel, n: int,
                     rng: np.random.Generator, max_attempts=None) -> list:
    """Sample up to ``n`` antipodal contact pairs.

    Each attempt draws an area-weighted surface point, casts a ray into the
    mesh along a direction uniform in the friction cone of the inward
    normal, and takes the exit point as the second contact. The pair is
    kept when both contacts pass :func:`force_closure` and it fits in the
    gripper. Stops after ``max_attempts`` (default ``50 * n``) attempts;
    may return fewer than ``n`` pairs, including none.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    mu = gripper.friction_mu
    budget = 50 * n if max_attempts is None else int(max_attempts)
    half = math.atan(mu)
    pairs = []
    used = 0
    batch = max(4 * n, 64)
    while len(pairs) < n and used < budget:
        m = min(batch, budget - used)
        used += m
        s = sample_surface(mesh, m, rng)
        inward = -s.normals
        dirs = sample_in_cone(inward, half, rng)
        t, fid = ray_intersect_many(mesh, s.points + _SELF_HIT * dirs, dirs)
        for k in range(m):
            if fid[k] < 0:
                continue
            n_out2 = mesh.face_normals[fid[k]]
            if n_out2 @ dirs[k] <= 0:  # entered instead of exiting
                continue
            c1 = s.points[k]
            c2 = s.points[k] + (t[k] + _SELF_HIT) * dirs[k]
            if np.linalg.norm(c2 - c1) > gripper.max_width:
                continue
            if not _fc_mask(c1, c2, inward[k], -n_out2, mu):
                continue
            pairs.append(ContactPair(c1, c2, inward[k].copy(), -n_out2))
            if len(pairs) == n:
                break
    return pairs


def robust_force_closure_many(pairs, mesh: TriangleMesh, mu: float, sigma_c: float,
                              m: int, rng: np.random.Generator) -> list:
    """:func:`robust_force_closure` for a list of pairs, sharing one nearest-point pass."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if sigma_c < 0:
        raise ValueError("sigma_c must be >= 0")
    if not pairs:
        return []
    c1 = np.array([p.c1 for p in pairs], dtype=float)
    c2 = np.array([p.c2 for p in pairs], dtype=float)
    n1 = np.array([p.n1 for p in pairs], dtype=float)
    n2 = np.array([p.n2 for p in pairs], dtype=float)
    if np.any(np.linalg.norm(c2 - c1, axis=1) < 1e-9):
        raise DegenerateGraspError("coincident contacts")
    base = _fc_mask(c1, c2, n1, n2, mu)
    k = len(pairs)
    if sigma_c == 0:
        scores = base.astype(float)
    else:
        noise = rng.normal(0.0, sigma_c, size=(k, m, 2, 3))
        q1 = c1[:, None, :] + noise[:, :, 0]
        q2 = c2[:, None, :] + noise[:, :, 1]
        p1, f1, _ = closest_points(mesh, q1.reshape(-1, 3))
        p2, f2, _ = closest_points(mesh, q2.reshape(-1, 3))
        nn1 = -mesh.face_normals[f1]
        nn2 = -mesh.face_normals[f2]
        ok = _fc_mask(p1, p2, nn1, nn2, mu).reshape(k, m)
        scores = ok.mean(axis=1)
    return [GraspQuality(float(s), bool(b)) for s, b in zip(scores, base)]


def robust_force_closure(pair: ContactPair, mesh: TriangleMesh, mu: float, sigma_c: float,
                         m: int, rng: np.random.Generator) -> GraspQuality:
    """Monte-Carlo probability of force closure under contact-position noise.

    Each of ``m`` trials adds isotropic Gaussian noise (std ``sigma_c``) to
    both contacts, snaps them to the nearest surface point, takes that
    face's inward normal and re-runs :func:`force_closure`.
    """
    return robust_force_closure_many([pair], mesh, mu, sigma_c, m, rng)[0]


def label_top_fraction(scores, fraction: float) -> list:
    """Mark the ``ceil(fraction * n)`` best scores; ties go to the lower index."""
    if not (0 < fraction <= 1):
        raise ValueError("fraction must be in (0, 1]")
    s = np.asarray(scores, dtype=float)
    n = len(s)
    if n == 0:
        return []
    k = math.ceil(round(fraction * n, 9))
    order = np.argsort(-s, kind="stable")
    flags = np.zeros(n, dtype=bool)
    flags[order[:k]] = True
    return flags.tolist()
