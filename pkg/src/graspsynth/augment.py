"""Depth-image augmentations with grasp-label co-transformation.

Spatial operations move pixels and labels together. The sim-to-real
corruption only touches pixels. Rotation and flips act about the image
center ``((W - 1) / 2, (H - 1) / 2)`` in the pixel-center convention of
:mod:`graspsynth.camera`, so quarter turns and flips permute pixels exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import ndimage

from .camera import DepthImage
from .projection import ImageGrasp, wrap_theta

SPATIAL_KINDS = ("rotate", "flip", "dropout")
KINDS = SPATIAL_KINDS + ("sim_to_real",)


@dataclass(frozen=True)
class AugmentOp:
    """One member of the augmentation family.

    ``params`` by kind:

    * rotate: ``angle`` (fixed) or ``angles`` (uniform choice); angles that
      are not multiples of 90 require ``allow_arbitrary=True``
    * flip: ``axis`` in {"horizontal", "vertical", "random"}
    * dropout: ``fraction`` in [0, 1)
    * sim_to_real: ``paint_threshold``, ``noise_std``, optional
      ``paint_probability`` (default 0.5)
    """

    kind: str
    params: Mapping = field(default_factory=dict)
    exec_probability: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not (0.0 <= self.exec_probability <= 1.0):
            raise ValueError("exec_probability must be in [0, 1]")
        p = dict(self.params)
        if self.kind == "dropout" and not (0.0 <= p.get("fraction", 0.0) < 1.0):
            raise ValueError("dropout fraction must be in [0, 1)")
        if self.kind == "rotate" and not p.get("allow_arbitrary", False):
            angles = p.get("angles", [p.get("angle", 90.0)])
            if any(float(a) % 90.0 != 0.0 for a in angles):
                raise ValueError("rotation angles must be multiples of 90 unless allow_arbitrary is set")
        if self.kind == "flip" and p.get("axis", "random") not in ("horizontal", "vertical", "random"):
            raise ValueError("flip axis must be horizontal, vertical or random")
        if self.kind == "sim_to_real" and p.get("noise_std", 0.0) < 0:
            raise ValueError("noise_std must be >= 0")
        object.__setattr__(self, "params", p)

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params), "exec_probability": self.exec_probability}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d.get("params", {})), float(d.get("exec_probability", 1.0)))


IDENTITY_SIM_TO_REAL = AugmentOp("sim_to_real", {"paint_threshold": math.inf, "noise_std": 0.0})


@dataclass(frozen=True)
class AugmentedSample:
    image: DepthImage
    labels: list
    applied_ops: list = field(default_factory=list)


@dataclass(frozen=True)
class AugmentPipeline:
    """Concrete spatial ops in order, then exactly one sim-to-real op."""

    ops: tuple

    def __post_init__(self):
        if not self.ops or self.ops[-1].kind != "sim_to_real":
            raise ValueError("a pipeline must end with a sim_to_real op")
        if any(op.kind == "sim_to_real" for op in self.ops[:-1]):
            raise ValueError("sim_to_real may only appear last")

    def apply(self, img: DepthImage, labels, rng: np.random.Generator) -> AugmentedSample:
        sample = AugmentedSample(img, list(labels), [])
        for op in self.ops:
            out = apply_op(op, sample.image, sample.labels, rng)
            sample = AugmentedSample(out.image, out.labels, sample.applied_ops + out.applied_ops)
        return sample


def apply_op(op: AugmentOp, img, labels, rng) -> AugmentedSample:
    p = op.params
    if op.kind == "rotate":
        return apply_rotate(img, labels, float(p["angle"]))
    if op.kind == "flip":
        return apply_flip(img, labels, p["axis"])
    if op.kind == "dropout":
        return apply_dropout(img, labels, float(p["fraction"]), rng)
    return sim_to_real(img, labels, float(p["paint_threshold"]), float(p["noise_std"]), rng,
                       paint_probability=float(p.get("paint_probability", 0.5)))


# --------------------------------------------------------------------------
# spatial


def _cos_sin(angle_deg):
    q = angle_deg / 90.0
    if q == int(q):
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(q) % 4]
    a = math.radians(angle_deg)
    return math.cos(a), math.sin(a)


def apply_rotate(img: DepthImage, labels, angle: float) -> AugmentedSample:
    """Rotate image content by ``angle`` degrees about the image center.

    A point ``p`` moves to ``c + R(angle) (p - c)`` in (u, v) coordinates,
    so a label's theta becomes ``theta - angle``, wrapped into (-90, 90]
    with the tilt sign flipped per half turn. Nearest-neighbor resampling;
    labels whose centers leave the frame are dropped.
    """
    h, w = img.shape
    cx, cy = 0.5 * (w - 1), 0.5 * (h - 1)
    c, s = _cos_sin(angle)
    vv, uu = np.mgrid[0:h, 0:w].astype(float)
    du, dv = uu - cx, vv - cy
    # inverse map: source = c + R(-angle) (dest - c)
    su = np.rint(cx + c * du + s * dv).astype(np.int64)
    sv = np.rint(cy - s * du + c * dv).astype(np.int64)
    ok = (su >= 0) & (su < w) & (sv >= 0) & (sv < h)
    out = np.zeros_like(img.pixels)
    out[ok] = img.pixels[sv[ok], su[ok]]

    new_labels = []
    for g in labels:
        x = cx + c * (g.x - cx) - s * (g.y - cy)
        y = cy + s * (g.x - cx) + c * (g.y - cy)
        if not (-0.5 <= x <= w - 0.5 and -0.5 <= y <= h - 0.5):
            continue
        theta, gamma = wrap_theta(g.theta - angle, g.gamma)
        new_labels.append(replace(g, x=x, y=y, theta=theta, gamma=gamma))
    return AugmentedSample(DepthImage(out), new_labels, [("rotate", {"angle": angle})])


def apply_flip(img: DepthImage, labels, axis: str) -> AugmentedSample:
    """Mirror the image; ``horizontal`` reflects u, ``vertical`` reflects v.

    Theta is negated in both cases. A vertical flip reverses the v order of
    the contacts, so the tilt sign flips as well.
    """
    h, w = img.shape
    if axis == "horizontal":
        out = img.pixels[:, ::-1].copy()
    elif axis == "vertical":
        out = img.pixels[::-1, :].copy()
    else:
        raise ValueError(f"unknown flip axis {axis!r}")
    new_labels = []
    for g in labels:
        if axis == "horizontal":
            theta, gamma = wrap_theta(-g.theta, g.gamma)
            new_labels.append(replace(g, x=(w - 1) - g.x, theta=theta, gamma=gamma))
        else:
            theta, gamma = wrap_theta(-g.theta, -g.gamma)
            new_labels.append(replace(g, y=(h - 1) - g.y, theta=theta, gamma=gamma))
    return AugmentedSample(DepthImage(out), new_labels, [("flip", {"axis": axis})])


def apply_dropout(img: DepthImage, labels, fraction: float, rng: np.random.Generator) -> AugmentedSample:
    """Invalidate ``round(fraction * n_valid)`` valid pixels chosen without replacement."""
    if not (0.0 <= fraction < 1.0):
        raise ValueError("fraction must be in [0, 1)")
    flat = img.pixels.ravel().copy()
    valid = np.flatnonzero(flat > 0)
    k = int(round(fraction * len(valid)))
    if k:
        flat[rng.choice(valid, size=k, replace=False)] = 0.0
    return AugmentedSample(DepthImage(flat.reshape(img.shape)), list(labels),
                           [("dropout", {"fraction": fraction, "count": k})])


# --------------------------------------------------------------------------
# sim-to-real

_LAPLACE4 = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def laplacian_map(img: DepthImage):
    """|4-neighbour Laplacian| per pixel; invalid pixels count as depth 0 and output 0."""
    d = img.pixels
    lap = np.abs(ndimage.convolve(d, _LAPLACE4, mode="nearest"))
    lap[d <= 0] = 0.0
    return lap


def _nms(mag, ang):
    """Thin gradient ridges: keep pixels not smaller than both neighbours along the gradient."""
    h, w = mag.shape
    pad = np.pad(mag, 1)
    # quantize direction to 0, 45, 90, 135 degrees
    q = (np.round(ang / (np.pi / 4.0)) % 4).astype(np.int64)
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros_like(mag, dtype=bool)
    for k, (di, dj) in offsets.items():
        m = q == k
        fwd = pad[1 + di : 1 + di + h, 1 + dj : 1 + dj + w]
        bwd = pad[1 - di : 1 - di + h, 1 - dj : 1 - dj + w]
        keep |= m & (mag >= fwd) & (mag >= bwd)
    return np.where(keep, mag, 0.0)


def canny_edges(img: DepthImage, low: float, high: float, sigma: float = 1.0):
    """Canny edges on raw depth (meters); thresholds are in meters per pixel.

    Gaussian smoothing, Sobel gradient (scaled to per-pixel units),
    non-maximum suppression, then hysteresis: weak pixels (>= low) survive
    when 8-connected to a strong pixel (>= high).
    """
    if low > high:
        raise ValueError("low threshold must not exceed high threshold")
    sm = ndimage.gaussian_filter(img.pixels, sigma=sigma, mode="nearest")
    gx = ndimage.sobel(sm, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(sm, axis=0, mode="nearest") / 8.0
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)
    thin = _nms(mag, ang)
    if not np.isfinite(high):
        return np.zeros(img.shape, dtype=bool)
    weak = thin >= low
    strong = thin >= high
    if low <= 0:
        weak &= thin > 0
        strong &= thin > 0
    lab, n = ndimage.label(weak, structure=np.ones((3, 3)))
    if n == 0:
        return np.zeros(img.shape, dtype=bool)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(lab[strong])] = True
    keep[0] = False
    return keep[lab]


def paint_candidates(img: DepthImage, paint_threshold: float):
    """Valid pixels with Laplacian above threshold or on a Canny edge.

    The Canny thresholds follow the paint threshold (high = threshold,
    low = threshold / 2), so a single knob controls how much gets painted.
    """
    if not np.isfinite(paint_threshold):
        return np.zeros(img.shape, dtype=bool)
    sel = laplacian_map(img) > paint_threshold
    sel |= canny_edges(img, 0.5 * paint_threshold, paint_threshold)
    return sel & (img.pixels > 0)


def sim_to_real(img: DepthImage, labels, paint_threshold: float, noise_std: float,
                rng: np.random.Generator, paint_probability: float = 0.5) -> AugmentedSample:
    """Paint high-curvature and edge pixels invalid at random, then add depth noise.

    Labels pass through untouched. Invalid pixels never become valid;
    noisy valid pixels are clamped to stay strictly positive.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    d = img.pixels.copy()
    cand = paint_candidates(img, paint_threshold)
    painted = cand & (rng.random(d.shape) < paint_probability)
    d[painted] = 0.0
    valid = d > 0
    if noise_std > 0:
        noisy = d[valid] + rng.normal(0.0, noise_std, size=int(valid.sum()))
        d[valid] = np.maximum(noisy, 1e-6)
    info = {"paint_threshold": paint_threshold, "noise_std": noise_std, "painted": int(painted.sum())}
    return AugmentedSample(DepthImage(d), labels, [("sim_to_real", info)])


# --------------------------------------------------------------------------
# pipeline sampling


def _concretize(op: AugmentOp, rng) -> AugmentOp:
    p = dict(op.params)
    if op.kind == "rotate" and "angles" in p:
        angles = list(p.pop("angles"))
        p["angle"] = float(angles[rng.integers(len(angles))])
    elif op.kind == "rotate":
        p.setdefault("angle", 90.0)
    if op.kind == "flip" and p.get("axis", "random") == "random":
        p["axis"] = ("horizontal", "vertical")[rng.integers(2)]
    if op.kind == "dropout":
        p.setdefault("fraction", 0.1)
    if op.kind == "sim_to_real":
        p.setdefault("paint_threshold", math.inf)
        p.setdefault("noise_std", 0.0)
    return AugmentOp(op.kind, p, 1.0)


def _sample_one(family, rng) -> AugmentPipeline:
    ops = []
    s2r = IDENTITY_SIM_TO_REAL
    for op in family:
        run = rng.random() < op.exec_probability
        if op.kind == "sim_to_real":
            if run:
                s2r = _concretize(op, rng)
            continue
        if run:
            ops.append(_concretize(op, rng))
    return AugmentPipeline(tuple(ops) + (s2r,))


def sample_pair(family, rng: np.random.Generator):
    """Draw two independent pipelines ``(t, t')`` from the family.

    Each op is included with its ``exec_probability``; spatial ops keep their
    declared order and a sim-to-real op always closes the pipeline (an
    identity one when the family's is not drawn).
    """
    family = list(family)
    if not family:
        raise ValueError("augmentation family is empty")
    return _sample_one(family, rng), _sample_one(family, rng)


DEFAULT_FAMILY = (
    AugmentOp("rotate", {"angles": [90.0, 180.0, 270.0]}, 0.5),
    AugmentOp("flip", {"axis": "random"}, 0.5),
    AugmentOp("dropout", {"fraction": 0.1}, 0.5),
    AugmentOp("sim_to_real", {"paint_threshold": 0.01, "noise_std": 0.003}, 1.0),
)
