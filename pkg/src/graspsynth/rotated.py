"""Rotated boxes: skew IoU, anchors, top-k matching, box coding, NMS, pooling.

Boxes are ``(x, y, w, h, theta)`` in pixels with ``theta`` in degrees,
measured from +u toward +v, and ``w`` lying along ``(cos theta, sin theta)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numba
import numpy as np

from .errors import EmptyRegionError

NEGATIVE = -1
IGNORE = -2


def normalize_angle(theta):
    """Fold an angle into [-90, 90) by half turns (the box is unchanged)."""
    t = math.fmod(theta + 90.0, 180.0)
    if t < 0:
        t += 180.0
    return t - 90.0


@dataclass(frozen=True)
class RotatedBox:
    x: float
    y: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError("box sides must be positive")
        if not (-90.0 <= self.theta < 90.0):
            object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    def as_array(self):
        return np.array([self.x, self.y, self.w, self.h, self.theta], dtype=float)

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in a))

    def corners(self):
        return _corners(self.as_array())

    @property
    def area(self):
        return self.w * self.h


def _as_box_array(boxes):
    if isinstance(boxes, RotatedBox):
        return boxes.as_array()[None]
    if isinstance(boxes, AnchorSet):
        return boxes.array
    arr = [b.as_array() if isinstance(b, RotatedBox) else np.asarray(b, float) for b in boxes]
    return np.asarray(arr, dtype=float).reshape(-1, 5)


@numba.njit(cache=True)
def _corners(b):
    """Counter-clockwise (in a y-up sense) corner list of one box."""
    x, y, w, h, th = b[0], b[1], b[2], b[3], b[4] * math.pi / 180.0
    c, s = math.cos(th), math.sin(th)
    hw, hh = 0.5 * w, 0.5 * h
    out = np.empty((4, 2))
    sx = (-1.0, 1.0, 1.0, -1.0)
    sy = (-1.0, -1.0, 1.0, 1.0)
    for k in range(4):
        lx, ly = sx[k] * hw, sy[k] * hh
        out[k, 0] = x + c * lx - s * ly
        out[k, 1] = y + s * lx + c * ly
    return out


@numba.njit(cache=True)
def _shoelace(poly, n):
    a = 0.0
    for i in range(n):
        j = (i + 1) % n
        a += poly[i, 0] * poly[j, 1] - poly[j, 0] * poly[i, 1]
    return 0.5 * a


@numba.njit(cache=True)
def _clip_area(pa, pb):
    """Area of convex polygon pa clipped by convex polygon pb (Sutherland-Hodgman)."""
    buf_in = np.empty((16, 2))
    buf_out = np.empty((16, 2))
    n = 4
    for i in range(4):
        buf_in[i, 0] = pa[i, 0]
        buf_in[i, 1] = pa[i, 1]
    for e in range(4):
        ax, ay = pb[e, 0], pb[e, 1]
        bx, by = pb[(e + 1) % 4, 0], pb[(e + 1) % 4, 1]
        ex, ey = bx - ax, by - ay
        m = 0
        for i in range(n):
            px, py = buf_in[i, 0], buf_in[i, 1]
            qx, qy = buf_in[(i + 1) % n, 0], buf_in[(i + 1) % n, 1]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            if sp >= 0.0:
                buf_out[m, 0] = px
                buf_out[m, 1] = py
                m += 1
            if (sp >= 0.0) != (sq >= 0.0):
                t = sp / (sp - sq)
                buf_out[m, 0] = px + t * (qx - px)
                buf_out[m, 1] = py + t * (qy - py)
                m += 1
        n = m
        if n == 0:
            return 0.0
        for i in range(n):
            buf_in[i, 0] = buf_out[i, 0]
            buf_in[i, 1] = buf_out[i, 1]
    return abs(_shoelace(buf_in, n))


@numba.njit(cache=True)
def _iou_one(a, b):
    # circumscribed circles apart -> no overlap
    ra = 0.5 * math.sqrt(a[2] * a[2] + a[3] * a[3])
    rb = 0.5 * math.sqrt(b[2] * b[2] + b[3] * b[3])
    dx, dy = a[0] - b[0], a[1] - b[1]
    if dx * dx + dy * dy > (ra + rb) * (ra + rb):
        return 0.0
    inter = _clip_area(_corners(a), _corners(b))
    area_a = a[2] * a[3]
    area_b = b[2] * b[3]
    if inter <= 1e-12 * min(area_a, area_b):
        return 0.0
    inter = min(inter, area_a, area_b)
    return inter / (area_a + area_b - inter)


@numba.njit(cache=True)
def _iou_matrix(a, b):
    out = np.zeros((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            out[i, j] = _iou_one(a[i], b[j])
    return out


def skew_iou(a: RotatedBox, b: RotatedBox) -> float:
    """Exact IoU of two rotated rectangles via polygon clipping."""
    return float(_iou_one(a.as_array(), b.as_array()))


def iou_matrix(boxes_a, boxes_b):
    return _iou_matrix(_as_box_array(boxes_a), _as_box_array(boxes_b))


# --------------------------------------------------------------------------
# anchors


@dataclass(frozen=True, eq=False)
class AnchorSet:
    array: np.ndarray
    stride: float
    scales: tuple
    ratios: tuple
    angles: tuple
    feat_h: int
    feat_w: int

    def __len__(self):
        return len(self.array)

    def __getitem__(self, i):
        return RotatedBox.from_array(self.array[i])

    @property
    def boxes(self):
        return [RotatedBox.from_array(a) for a in self.array]


DEFAULT_SCALES = (16.0, 32.0, 64.0)
DEFAULT_RATIOS = (0.5, 2.0)
DEFAULT_ANGLES = (-75.0, -45.0, -15.0, 15.0, 45.0, 75.0)


def generate_anchors(feat_h, feat_w, stride, scales=DEFAULT_SCALES, ratios=DEFAULT_RATIOS,
                     angles=DEFAULT_ANGLES) -> AnchorSet:
    """Anchors centered on every feature cell: area ``scale**2``, ``w / h = ratio``.

    Order is row-major over cells, then scale, ratio, angle.
    """
    if not (len(scales) and len(ratios) and len(angles)):
        raise ValueError("scales, ratios and angles must be non-empty")
    shapes = []
    for s in scales:
        for r in ratios:
            w, h = s * math.sqrt(r), s / math.sqrt(r)
            for a in angles:
                shapes.append((w, h, normalize_angle(float(a))))
    shapes = np.asarray(shapes, dtype=float)
    ii, jj = np.meshgrid(np.arange(feat_h), np.arange(feat_w), indexing="ij")
    cx = (jj.ravel() + 0.5) * stride
    cy = (ii.ravel() + 0.5) * stride
    n_cell, n_shape = len(cx), len(shapes)
    arr = np.empty((n_cell * n_shape, 5))
    arr[:, 0] = np.repeat(cx, n_shape)
    arr[:, 1] = np.repeat(cy, n_shape)
    arr[:, 2:] = np.tile(shapes, (n_cell, 1))
    return AnchorSet(arr, float(stride), tuple(scales), tuple(ratios), tuple(angles), feat_h, feat_w)


# --------------------------------------------------------------------------
# matching


@dataclass(frozen=True, eq=False)
class MatchAssignment:
    """Per-anchor label: gt index (positive), ``NEGATIVE`` or ``IGNORE``."""

    labels: np.ndarray
    max_iou: np.ndarray

    @property
    def positive(self):
        return self.labels >= 0

    @property
    def negative(self):
        return self.labels == NEGATIVE

    @property
    def ignored(self):
        return self.labels == IGNORE

    def counts(self, n_gt=None):
        n_gt = int(self.labels.max(initial=-1)) + 1 if n_gt is None else n_gt
        per_gt = np.bincount(self.labels[self.labels >= 0], minlength=n_gt)
        return {
            "positive": int(self.positive.sum()),
            "negative": int(self.negative.sum()),
            "ignore": int(self.ignored.sum()),
            "per_gt": per_gt.tolist(),
        }


def match_topk(anchors, gts, pos_thresh=0.7, neg_thresh=0.3, k=3, rng=None) -> MatchAssignment:
    """Three-way anchor labelling with a random pick among the top-k gts.

    A positive anchor is assigned a gt drawn uniformly from its ``k`` highest
    IoU gts (ties by gt index) that also clear ``pos_thresh``. Picking at
    random rather than the argmax keeps heavily overlapping labels from all
    collapsing onto the largest one.
    """
    if not pos_thresh > neg_thresh:
        raise ValueError("pos_thresh must exceed neg_thresh")
    if k < 1:
        raise ValueError("k must be >= 1")
    a = _as_box_array(anchors)
    g = _as_box_array(gts) if len(gts) else np.zeros((0, 5))
    n = len(a)
    labels = np.full(n, NEGATIVE, dtype=np.int64)
    if len(g) == 0:
        return MatchAssignment(labels, np.zeros(n))
    if rng is None:
        rng = np.random.default_rng(0)
    ious = _iou_matrix(a, g)
    max_iou = ious.max(axis=1)
    labels[(max_iou >= neg_thresh)] = IGNORE
    pos = np.flatnonzero(max_iou >= pos_thresh)
    if len(pos):
        order = np.argsort(-ious[pos], axis=1, kind="stable")[:, :k]
        for row, ai in enumerate(pos):
            cand = order[row]
            cand = cand[ious[ai, cand] >= pos_thresh]
            labels[ai] = cand[0] if len(cand) == 1 else cand[rng.integers(len(cand))]
    return MatchAssignment(labels, max_iou)


# --------------------------------------------------------------------------
# box coding


class BoxDelta(NamedTuple):
    dx: float
    dy: float
    dw: float
    dh: float
    dtheta: float


def _canonical_relative(anchor: RotatedBox, gt: RotatedBox):
    """Equivalent form of ``gt`` whose angle is nearest the anchor's.

    Candidates are (w, h, theta) and (h, w, theta + 90), each shifted by a
    half turn into [theta_a - 90, theta_a + 90). Ties keep the unswapped form.
    """
    def rel(t):
        return normalize_angle(t - anchor.theta)

    d0 = rel(gt.theta)
    d1 = rel(gt.theta + 90.0)
    if abs(d1) < abs(d0):
        return gt.h, gt.w, d1
    return gt.w, gt.h, d0


def encode_targets(anchor: RotatedBox, gt: RotatedBox) -> BoxDelta:
    w, h, dth = _canonical_relative(anchor, gt)
    return BoxDelta(
        (gt.x - anchor.x) / anchor.w,
        (gt.y - anchor.y) / anchor.h,
        math.log(w / anchor.w),
        math.log(h / anchor.h),
        dth / 90.0,
    )


def decode_box(anchor: RotatedBox, d) -> RotatedBox:
    d = BoxDelta(*d)
    return RotatedBox(
        anchor.x + d.dx * anchor.w,
        anchor.y + d.dy * anchor.h,
        anchor.w * math.exp(d.dw),
        anchor.h * math.exp(d.dh),
        normalize_angle(anchor.theta + 90.0 * d.dtheta),
    )


def boxes_equivalent(a: RotatedBox, b: RotatedBox, tol=1e-9):
    """Same point set up to (w, h, theta) == (h, w, theta + 90) and half turns."""
    if abs(a.x - b.x) > tol or abs(a.y - b.y) > tol:
        return False
    for w, h, t in ((b.w, b.h, b.theta), (b.h, b.w, b.theta + 90.0)):
        dt = abs(normalize_angle(a.theta - t))
        dt = min(dt, 180.0 - dt)
        if abs(a.w - w) <= tol and abs(a.h - h) <= tol and dt <= tol:
            return True
    return False


# --------------------------------------------------------------------------
# NMS and pooling


def rotated_nms(boxes, scores: Sequence[float], iou_thresh: float) -> list:
    """Greedy suppression in descending score order; returns kept indices."""
    arr = _as_box_array(boxes) if len(boxes) else np.zeros((0, 5))
    s = np.asarray(scores, dtype=float)
    if len(arr) != len(s):
        raise ValueError("boxes and scores differ in length")
    order = np.argsort(-s, kind="stable")
    keep = []
    alive = np.ones(len(arr), dtype=bool)
    for i in order:
        if not alive[i]:
            continue
        keep.append(int(i))
        rest = np.flatnonzero(alive)
        if len(rest):
            iou = _iou_matrix(arr[i : i + 1], arr[rest])[0]
            alive[rest[iou >= iou_thresh]] = False
        alive[i] = False
    return keep


def bilinear(feature, xs, ys):
    """Sample an (H, W, C) grid at float (x, y) with zero padding outside."""
    f = np.asarray(feature, dtype=float)
    if f.ndim == 2:
        f = f[..., None]
    h, w = f.shape[:2]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(xs.shape + (f.shape[2],))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = np.where(ok, wx * wy, 0.0)
            vals = f[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += wgt[..., None] * vals
    return out


def rrpool(feature, box: RotatedBox, out_h: int, out_w: int):
    """Bilinearly sample an ``out_h x out_w`` lattice spanning a rotated box.

    Lattice points sit at cell centers of the box's local grid; feature
    cell ``[row, col]`` is located at ``(x, y) = (col, row)``.
    """
    f = np.asarray(feature, dtype=float)
    if f.ndim == 2:
        f = f[..., None]
    h, w = f.shape[:2]
    corners = box.corners()
    if (corners[:, 0].max() < -1 or corners[:, 0].min() > w or
            corners[:, 1].max() < -1 or corners[:, 1].min() > h):
        raise EmptyRegionError("box lies outside the feature grid")
    th = math.radians(box.theta)
    c, s = math.cos(th), math.sin(th)
    lu = ((np.arange(out_w) + 0.5) / out_w - 0.5) * box.w
    lv = ((np.arange(out_h) + 0.5) / out_h - 0.5) * box.h
    lv, lu = np.meshgrid(lv, lu, indexing="ij")
    xs = box.x + c * lu - s * lv
    ys = box.y + s * lu + c * lv
    return bilinear(f, xs, ys)
