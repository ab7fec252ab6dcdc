"""Small numpy contrastive learner: encoder, projection head, momentum keys.

This stands in for the full convolutional encoder so that the contrastive
mechanism (two augmented views, in-batch negatives, momentum key encoder)
can be trained and checked end to end on a CPU in seconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .augment import DEFAULT_FAMILY, sample_pair
from .camera import DepthImage
from .errors import InsufficientNegativesError
from .losses import KeyBank, info_nce, momentum_update

PATCH = 28
# keeps |x|^2 near 10 so a 0.05 step does not saturate the first tanh layer
INPUT_SCALE = 0.2


class MLP:
    """Affine layers with tanh; parameters live in one flat vector."""

    def __init__(self, sizes, rng=None, scale=1.0, final_activation=True, params=None):
        self.sizes = tuple(int(s) for s in sizes)
        self.final_activation = final_activation
        self._shapes = []
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            self._shapes += [(a, b), (b,)]
        n = sum(int(np.prod(s)) for s in self._shapes)
        if params is None:
            params = np.empty(n)
            off = 0
            for shp in self._shapes:
                size = int(np.prod(shp))
                if len(shp) == 2:
                    params[off : off + size] = rng.normal(0.0, scale / math.sqrt(shp[0]), size)
                else:
                    params[off : off + size] = 0.0
                off += size
        self.params = np.asarray(params, dtype=float).copy()
        if self.params.shape != (n,):
            raise ValueError("parameter vector has the wrong length")

    def _views(self, flat):
        out, off = [], 0
        for shp in self._shapes:
            size = int(np.prod(shp))
            out.append(flat[off : off + size].reshape(shp))
            off += size
        return out

    def _act(self, i):
        return i < len(self.sizes) - 2 or self.final_activation

    def forward(self, x):
        views = self._views(self.params)
        cache = [x]
        h = x
        for i in range(len(self.sizes) - 1):
            h = h @ views[2 * i] + views[2 * i + 1]
            if self._act(i):
                h = np.tanh(h)
            cache.append(h)
        return h, cache

    def backward(self, cache, dout):
        views = self._views(self.params)
        grad = np.zeros_like(self.params)
        gviews = self._views(grad)
        d = dout
        for i in reversed(range(len(self.sizes) - 1)):
            if self._act(i):
                d = d * (1.0 - cache[i + 1] ** 2)
            gviews[2 * i][...] = cache[i].T @ d
            gviews[2 * i + 1][...] = d.sum(axis=0)
            d = d @ views[2 * i].T
        return grad, d


@dataclass
class ContrastiveNet:
    """Encoder (28x28 -> D) followed by an L2-normalized projection head (D -> D')."""

    encoder: MLP
    head: MLP

    @classmethod
    def create(cls, rng, feature_dim=32, proj_dim=16, hidden=64, scale=3.0, out_weight=0.05):
        """Random net whose outputs all start near one shared direction.

        The last head layer gets a random unit bias and weights shrunk by
        ``out_weight``, so untrained similarities are nearly uniform and the
        initial InfoNCE sits near ln N.
        """
        enc = MLP([PATCH * PATCH, hidden, feature_dim], rng, scale=scale)
        head = MLP([feature_dim, feature_dim, proj_dim], rng, scale=scale, final_activation=False)
        views = head._views(head.params)
        views[-2][...] *= out_weight
        b = rng.normal(size=proj_dim)
        views[-1][...] = b / np.linalg.norm(b)
        return cls(enc, head)

    @property
    def params(self):
        return np.concatenate([self.encoder.params, self.head.params])

    def set_params(self, flat):
        n = len(self.encoder.params)
        self.encoder.params = np.array(flat[:n], dtype=float)
        self.head.params = np.array(flat[n:], dtype=float)

    def copy(self):
        return ContrastiveNet(
            MLP(self.encoder.sizes, params=self.encoder.params, final_activation=True),
            MLP(self.head.sizes, params=self.head.params, final_activation=False),
        )

    def features(self, x):
        return self.encoder.forward(x)[0]

    def forward(self, x):
        f, c_enc = self.encoder.forward(x)
        u, c_head = self.head.forward(f)
        norm = np.linalg.norm(u, axis=1, keepdims=True)
        return u / norm, (c_enc, c_head, u, norm)

    def backward(self, cache, dq):
        c_enc, c_head, u, norm = cache
        qn = u / norm
        du = (dq - qn * np.sum(dq * qn, axis=1, keepdims=True)) / norm
        g_head, df = self.head.backward(c_head, du)
        g_enc, _ = self.encoder.backward(c_enc, df)
        return np.concatenate([g_enc, g_head])


def preprocess(img: DepthImage, size=PATCH):
    """Downsample to ``size x size`` and center depth on the valid mean.

    Output is the occupancy-weighted depth offset (in decimeters) so that
    silhouette and relief both reach the encoder.
    """
    d = img.pixels
    h, w = d.shape
    rows = (np.arange(size) * h) // size
    cols = (np.arange(size) * w) // size
    if h % size == 0 and w % size == 0:
        bh, bw = h // size, w // size
        blocks = d.reshape(size, bh, size, bw)
        valid = (blocks > 0).mean(axis=(1, 3))
        s = blocks.sum(axis=(1, 3))
        cnt = (blocks > 0).sum(axis=(1, 3))
        depth = np.where(cnt > 0, s / np.maximum(cnt, 1), 0.0)
    else:
        sub = d[rows][:, cols]
        valid = (sub > 0).astype(float)
        depth = sub
    m = valid > 0
    mean = depth[m].mean() if m.any() else 0.0
    rel = np.where(m, (depth - mean) * 10.0, 0.0)
    return INPUT_SCALE * (valid - 0.5 + rel).ravel()


def batch_info_nce(q, k, tau):
    """Mean InfoNCE over a batch where row i's positive is k[i] and the rest are negatives.

    Returns the loss and its gradient w.r.t. ``q``.
    """
    logits = q @ k.T / tau
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    n = len(q)
    loss = float(-np.mean(np.log(p[np.arange(n), np.arange(n)])))
    p[np.arange(n), np.arange(n)] -= 1.0
    dq = p @ k / tau / n
    return loss, dq


@dataclass
class TrainResult:
    losses: list
    query: ContrastiveNet
    key: ContrastiveNet
    step_losses: list = field(default_factory=list)


def toy_contrastive_train(dataset, family=DEFAULT_FAMILY, epochs=50, batch=16, seed=0,
                          lr=0.05, momentum=0.99, tau=0.07, init_scale=3.0,
                          queue_size=0) -> TrainResult:
    """Train the query net with InfoNCE on augmented view pairs.

    Per step: draw ``(t, t')`` for each image, encode ``x_q`` with the query
    net and ``x_k`` with the key net, score each query against all keys of
    the batch (plus the optional queue), take one gradient step on the query
    net and move the key net toward it by ``momentum``. Returns the mean
    loss of every epoch.
    """
    if batch < 2:
        raise InsufficientNegativesError("a batch needs at least 2 samples for in-batch negatives")
    images = list(dataset)
    if len(images) < 2 * batch:
        raise ValueError("dataset must hold at least 2 * batch images")
    rng = np.random.default_rng(seed)
    query = ContrastiveNet.create(rng, scale=init_scale)
    key = query.copy()
    bank = KeyBank(queue_size=queue_size) if queue_size else None
    epoch_losses, step_losses = [], []
    n_batches = len(images) // batch
    for _ in range(epochs):
        order = rng.permutation(len(images))
        total = 0.0
        for b in range(n_batches):
            idx = order[b * batch : (b + 1) * batch]
            xq, xk = [], []
            for i in idx:
                t, t2 = sample_pair(family, rng)
                xq.append(preprocess(t.apply(images[i], [], rng).image))
                xk.append(preprocess(t2.apply(images[i], [], rng).image))
            xq, xk = np.asarray(xq), np.asarray(xk)
            q, cache = query.forward(xq)
            k, _ = key.forward(xk)
            if bank is not None and len(bank._queue):
                loss, dq = _queue_loss(q, k, bank, tau)
            else:
                loss, dq = batch_info_nce(q, k, tau)
            grad = query.backward(cache, dq)
            query.set_params(query.params - lr * grad)
            key.set_params(momentum_update(key.params, query.params, momentum))
            if bank is not None:
                bank.enqueue(k)
            total += loss
            step_losses.append(loss)
        epoch_losses.append(total / n_batches)
    return TrainResult(epoch_losses, query, key, step_losses)


def _queue_loss(q, k, bank, tau):
    queued = np.asarray(bank._queue)
    allk = np.vstack([k, queued])
    logits = q @ allk.T / tau
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    n = len(q)
    loss = float(-np.mean(np.log(p[np.arange(n), np.arange(n)])))
    p[np.arange(n), np.arange(n)] -= 1.0
    return loss, p @ allk / tau / n


def synthetic_depth_images(n, size=112, rng=None, seed=0):
    """Procedural single-object depth images (boxes, discs and ramps on no-data).

    Each image holds one object at 0.4-0.8 m with a random footprint and a
    planar or domed top surface.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    out = []
    vv, uu = np.mgrid[0:size, 0:size].astype(float)
    for _ in range(n):
        kind = rng.integers(3)
        cx, cy = rng.uniform(0.3, 0.7, 2) * size
        a, b = rng.uniform(0.1, 0.3, 2) * size
        ang = rng.uniform(0, np.pi)
        du, dv = uu - cx, vv - cy
        lu = np.cos(ang) * du + np.sin(ang) * dv
        lv = -np.sin(ang) * du + np.cos(ang) * dv
        base = rng.uniform(0.4, 0.8)
        if kind == 0:
            mask = (np.abs(lu) <= a) & (np.abs(lv) <= b)
            depth = base + 0.05 * (lu / a) * rng.uniform(-1, 1)
        elif kind == 1:
            r2 = (lu / a) ** 2 + (lv / b) ** 2
            mask = r2 <= 1.0
            depth = base - 0.05 * np.sqrt(np.clip(1.0 - r2, 0.0, 1.0))
        else:
            mask = (np.abs(lu) <= a) & (np.abs(lv) <= b) & (lu + lv > -a)
            depth = base + 0.08 * (lv / b)
        img = np.where(mask, depth, 0.0)
        out.append(DepthImage(img))
    return out


def first_epoch_expected(batch):
    """Loss of a uniform N-way softmax: the untrained reference level ln(batch)."""
    return math.log(batch)


def info_nce_rows(q, k, tau):
    """Row-wise :func:`info_nce` with row i's positive k[i] (reference for tests)."""
    vals = []
    for i in range(len(q)):
        neg = np.delete(k, i, axis=0)
        vals.append(info_nce(q[i], k[i], neg, tau))
    return np.asarray(vals)
