"""Central finite-difference checks of every analytic loss gradient.

Each suite draws random inputs, compares the analytic gradient ``a`` with
the numeric ``n = (f(x + h e_i) - f(x - h e_i)) / 2h`` and reports the
worst relative error ``||a - n|| / max(||a||, ||n||, floor)`` over inputs.
The vector norm keeps round-off in near-zero coordinates of an otherwise
large gradient from counting as a mismatch.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import losses as L
from .toy import ContrastiveNet, batch_info_nce

STEP = 1e-5
TOL = 1e-4
# gradient norm below which differences count as absolute
FLOOR = 1e-8


@dataclass
class SuiteResult:
    name: str
    n_inputs: int
    max_rel_error: float
    seconds: float

    @property
    def passed(self):
        return self.max_rel_error <= TOL


def numeric_grad(f, x, h=STEP):
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, n, floor=FLOOR):
    a, n = np.ravel(a).astype(float), np.ravel(n).astype(float)
    den = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / den)


def _away_from(x, points, margin):
    return all(abs(abs(x) - p) > margin for p in points)


def _smooth_l1(rng, n):
    worst = 0.0
    for _ in range(n):
        x = rng.uniform(-3, 3)
        while not _away_from(x, (0.0, 1.0), 1e-3):
            x = rng.uniform(-3, 3)
        worst = max(worst, rel_error(L.smooth_l1_grad(x), numeric_grad(lambda v: L.smooth_l1(v[0]), [x])[0]))
    return worst


def _proposal(rng, n):
    w = L.LossWeights()
    worst = 0.0
    for _ in range(n):
        gt = rng.normal(0, 1.5, 5)
        pred = rng.normal(0, 1.5, 5)
        while not all(_away_from(r, (0.0, 1.0), 1e-3) for r in gt - pred):
            pred = rng.normal(0, 1.5, 5)
        s = rng.uniform(0.05, 1.0)
        x = np.concatenate([[s], pred])
        ds, dp = L.proposal_loss_grad(s, pred, gt, w)
        num = numeric_grad(lambda v: L.proposal_loss(v[0], v[1:], gt, w), x)
        worst = max(worst, rel_error(np.concatenate([[ds], dp]), num))
    return worst


def _refinement(rng, n):
    worst = 0.0
    for _ in range(n):
        gam, z = rng.normal(0, 10), rng.uniform(0.3, 1.5)
        gh = gam + rng.choice([-1, 1]) * rng.uniform(1e-3, 5)
        zh = z + rng.choice([-1, 1]) * rng.uniform(1e-3, 0.5)
        lg, lz = rng.uniform(0.1, 3, 2)
        a = L.refinement_loss_grad(gh, gam, zh, z, lg, lz)
        num = numeric_grad(lambda v: L.refinement_loss(v[0], gam, v[1], z, lg, lz), [gh, zh])
        worst = max(worst, rel_error(a, num))
    return worst


def _info_nce(rng, n, dim=16, n_neg=7):
    worst = 0.0
    for _ in range(n):
        q, kp = rng.normal(size=dim), rng.normal(size=dim)
        neg = rng.normal(size=(n_neg, dim))
        q, kp = q / np.linalg.norm(q), kp / np.linalg.norm(kp)
        neg /= np.linalg.norm(neg, axis=1, keepdims=True)
        tau = rng.uniform(0.05, 1.0)
        dq, dk, dn = L.info_nce_grad(q, kp, neg, tau)
        nq = numeric_grad(lambda v: L.info_nce(v, kp, neg, tau), q)
        nk = numeric_grad(lambda v: L.info_nce(q, v, neg, tau), kp)
        nn = numeric_grad(lambda v: L.info_nce(q, kp, v, tau), neg)
        worst = max(worst, rel_error(dq, nq), rel_error(dk, nk), rel_error(dn, nn))
    return worst


def _overall(rng, n):
    worst = 0.0
    for _ in range(n):
        x = rng.uniform(0, 5, 3)
        sw = tuple(rng.uniform(0, 5, 3))
        a = L.loss_gradients("overall", l_p=x[0], l_r=x[1], l_q=x[2], stage_weights=sw)
        num = numeric_grad(lambda v: L.overall_loss(*v, stage_weights=sw), x)
        worst = max(worst, rel_error(a, num))
    return worst


def _toy_backprop(rng, n, coords=12):
    """Encoder + head parameters through the batch InfoNCE loss."""
    worst = 0.0
    for _ in range(n):
        net = ContrastiveNet.create(rng, feature_dim=8, proj_dim=4, hidden=8, out_weight=1.0)
        xq = rng.normal(0, 0.3, (4, net.encoder.sizes[0]))
        k = rng.normal(size=(4, 4))
        k /= np.linalg.norm(k, axis=1, keepdims=True)
        q, cache = net.forward(xq)
        _, dq = batch_info_nce(q, k, 0.5)
        grad = net.backward(cache, dq)
        base = net.params
        idx = rng.choice(len(base), coords, replace=False)

        def f(sub):
            p = base.copy()
            p[idx] = sub
            net.set_params(p)
            return batch_info_nce(net.forward(xq)[0], k, 0.5)[0]

        num = numeric_grad(f, base[idx])
        net.set_params(base)
        worst = max(worst, rel_error(grad[idx], num))
    return worst


SUITES = {
    "smooth_l1": _smooth_l1,
    "proposal": _proposal,
    "refinement": _refinement,
    "info_nce": _info_nce,
    "overall": _overall,
    "toy_backprop": _toy_backprop,
}


def run_all(seed=0, n_inputs=100):
    """Run every suite; returns a list of :class:`SuiteResult`."""
    out = []
    for i, (name, fn) in enumerate(SUITES.items()):
        rng = np.random.default_rng([seed, i])
        t = time.perf_counter()
        err = fn(rng, n_inputs)
        out.append(SuiteResult(name, n_inputs, err, time.perf_counter() - t))
    return out
