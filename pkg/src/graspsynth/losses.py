"""Training losses with hand-written gradients.

Box variables are ordered ``(x, y, w, h, theta)`` everywhere, matching
:class:`graspsynth.rotated.BoxDelta`.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidScoreError, InvalidTemperatureError, ShapeError

BOX_VARS = ("x", "y", "w", "h", "theta")


@dataclass(frozen=True)
class LossWeights:
    lambda_x: float = 5.0
    lambda_y: float = 5.0
    lambda_theta: float = 5.0
    lambda_w: float = 1.0
    lambda_h: float = 1.0
    lambda_gamma: float = 1.0
    lambda_z: float = 1.0
    # (first epoch, (lambda_p, lambda_r, lambda_q)) sorted by epoch
    stages: tuple = ((0, (1.0, 1.0, 5.0)), (20, (5.0, 5.0, 2.0)))

    def __post_init__(self):
        vals = [self.lambda_x, self.lambda_y, self.lambda_theta, self.lambda_w,
                self.lambda_h, self.lambda_gamma, self.lambda_z]
        vals += [w for _, ws in self.stages for w in ws]
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")

    @property
    def box(self):
        return np.array([self.lambda_x, self.lambda_y, self.lambda_w, self.lambda_h, self.lambda_theta])

    def stage_weights(self, epoch):
        current = self.stages[0][1]
        for start, ws in self.stages:
            if epoch >= start:
                current = ws
        return current


def smooth_l1(x):
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    out = np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)
    return float(out) if out.ndim == 0 else out


def smooth_l1_grad(x):
    """Derivative; at |x| = 1 both branches agree (slope +-1)."""
    x = np.asarray(x, dtype=float)
    out = np.where(np.abs(x) < 1.0, x, np.sign(x))
    return float(out) if out.ndim == 0 else out


def _box_vec(v):
    if isinstance(v, dict):
        return np.array([float(v[k]) for k in BOX_VARS])
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (5,):
        raise ShapeError("box variables must have 5 entries (x, y, w, h, theta)")
    return arr


def proposal_loss(s_pos, pred, gt, weights: LossWeights = LossWeights()) -> float:
    """``-log s_pos + sum_v lambda_v * smooth_l1(v* - v)``."""
    if not s_pos > 0:
        raise InvalidScoreError("s_pos must be positive")
    r = _box_vec(gt) - _box_vec(pred)
    return float(-math.log(s_pos) + weights.box @ smooth_l1(r))


def proposal_loss_grad(s_pos, pred, gt, weights: LossWeights = LossWeights()):
    """Gradient w.r.t. ``(s_pos, pred)``."""
    if not s_pos > 0:
        raise InvalidScoreError("s_pos must be positive")
    r = _box_vec(gt) - _box_vec(pred)
    return -1.0 / s_pos, -weights.box * smooth_l1_grad(r)


def refinement_loss(gamma_hat, gamma, z_hat, z, lambda_gamma=1.0, lambda_z=1.0) -> float:
    return float(lambda_gamma * abs(gamma_hat - gamma) + lambda_z * abs(z_hat - z))


def refinement_loss_grad(gamma_hat, gamma, z_hat, z, lambda_gamma=1.0, lambda_z=1.0):
    """Gradient w.r.t. ``(gamma_hat, z_hat)``; sign(0) taken as 0."""
    return lambda_gamma * float(np.sign(gamma_hat - gamma)), lambda_z * float(np.sign(z_hat - z))


class KeyBank:
    """Negative keys for InfoNCE, optionally with a FIFO queue of past keys."""

    def __init__(self, keys=None, queue_size=0, dim=None):
        self.queue_size = int(queue_size)
        self._queue = deque(maxlen=self.queue_size or None)
        self._current = np.zeros((0, dim or 0))
        if keys is not None:
            self.set_current(keys)

    @staticmethod
    def _normalize(k):
        k = np.atleast_2d(np.asarray(k, dtype=float))
        return k / np.linalg.norm(k, axis=1, keepdims=True)

    def set_current(self, keys):
        self._current = self._normalize(keys)

    def enqueue(self, keys):
        if self.queue_size:
            for k in self._normalize(keys):
                self._queue.append(k)

    @property
    def keys(self):
        if self._queue:
            return np.vstack([self._current, np.asarray(self._queue)])
        return self._current

    def __len__(self):
        return len(self.keys)


def _bank_array(bank):
    if isinstance(bank, KeyBank):
        return bank.keys
    b = np.asarray(bank, dtype=float)
    return b.reshape(0, 0) if b.size == 0 else np.atleast_2d(b)


def _logits(q, k_pos, bank, tau):
    if not tau > 0:
        raise InvalidTemperatureError("temperature must be positive")
    q = np.asarray(q, dtype=float)
    keys = np.vstack([np.asarray(k_pos, dtype=float)[None], _bank_array(bank).reshape(-1, q.shape[0])])
    return keys, keys @ q / tau


def info_nce(q, k_pos, bank, tau=0.07) -> float:
    """N-way softmax cross-entropy with the positive key in slot 0.

    ``bank`` holds the N - 1 negative keys (array or :class:`KeyBank`).
    """
    _, z = _logits(q, k_pos, bank, tau)
    zmax = z.max()
    return float(zmax + math.log(np.exp(z - zmax).sum()) - z[0])


def info_nce_grad(q, k_pos, bank, tau=0.07):
    """Gradients w.r.t. ``(q, k_pos, negatives)``."""
    keys, z = _logits(q, k_pos, bank, tau)
    p = np.exp(z - z.max())
    p /= p.sum()
    q = np.asarray(q, dtype=float)
    target = np.zeros_like(p)
    target[0] = 1.0
    coef = (p - target) / tau
    dq = coef @ keys
    dkeys = coef[:, None] * q[None, :]
    return dq, dkeys[0], dkeys[1:]


def overall_loss(l_p, l_r, l_q, stage_weights=None, epoch=None, weights: LossWeights = LossWeights()) -> float:
    """Weighted sum of the proposal, refinement and contrastive losses.

    Pass explicit ``stage_weights`` or an ``epoch`` to look them up in the
    schedule of ``weights``.
    """
    if stage_weights is None:
        stage_weights = weights.stage_weights(0 if epoch is None else epoch)
    wp, wr, wq = stage_weights
    return float(wp * l_p + wr * l_r + wq * l_q)


def momentum_update(key_params, query_params, m: float):
    k = np.asarray(key_params, dtype=float)
    q = np.asarray(query_params, dtype=float)
    if k.shape != q.shape:
        raise ShapeError(f"parameter shapes differ: {k.shape} vs {q.shape}")
    if not (0.0 <= m <= 1.0):
        raise ValueError("momentum must be in [0, 1]")
    return m * k + (1.0 - m) * q


def loss_gradients(name: str, **inputs):
    """Dispatch to the analytic gradient of a named loss."""
    table = {
        "smooth_l1": lambda x: smooth_l1_grad(x),
        "proposal": proposal_loss_grad,
        "refinement": refinement_loss_grad,
        "info_nce": info_nce_grad,
        "overall": lambda l_p, l_r, l_q, stage_weights: tuple(float(w) for w in stage_weights),
    }
    if name not in table:
        raise KeyError(f"no gradient for loss {name!r}")
    return table[name](**inputs)
