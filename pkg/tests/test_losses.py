import math

import numpy as np
import pytest

from graspsynth import losses as L
from graspsynth.errors import InvalidScoreError, InvalidTemperatureError, ShapeError
from graspsynth.gradcheck import TOL, rel_error, run_all
from oracles import finite_diff


def _unit(rng, shape):
    v = rng.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# smooth L1


@pytest.mark.parametrize("x,expected", [(0.0, 0.0), (0.5, 0.125), (-2.0, 1.5), (1.0, 0.5), (-1.0, 0.5)])
def test_smooth_l1_values(x, expected):
    assert L.smooth_l1(x) == expected


def test_smooth_l1_kink_is_c1():
    for s in (1.0, -1.0):
        lo, hi = s * (1 - 1e-9), s * (1 + 1e-9)
        assert L.smooth_l1(lo) == pytest.approx(L.smooth_l1(hi), abs=1e-8)
        assert L.smooth_l1_grad(lo) == pytest.approx(L.smooth_l1_grad(hi), abs=1e-8)
    assert L.smooth_l1_grad(0.5) == 0.5
    assert L.smooth_l1_grad(-3.0) == -1.0


# proposal and refinement


def test_proposal_examples():
    v = [1.0, 2.0, 3.0, 4.0, 5.0]
    assert L.proposal_loss(1.0, v, v) == 0.0
    assert L.proposal_loss(math.exp(-1), v, v) == pytest.approx(1.0, abs=1e-15)
    gt = dict(zip(L.BOX_VARS, v))
    pred = dict(gt, x=gt["x"] + 2.0)
    assert L.proposal_loss(1.0, pred, gt) == pytest.approx(7.5)
    # w carries weight 1
    pred = dict(gt, w=gt["w"] + 2.0)
    assert L.proposal_loss(1.0, pred, gt) == pytest.approx(1.5)


def test_proposal_errors():
    with pytest.raises(InvalidScoreError):
        L.proposal_loss(0.0, [0] * 5, [0] * 5)
    with pytest.raises(ShapeError):
        L.proposal_loss(0.5, [0] * 4, [0] * 5)


def test_refinement_examples():
    assert L.refinement_loss(3.0, 3.0, 0.5, 0.5) == 0.0
    assert L.refinement_loss(15.0, 5.0, 0.5, 0.5) == 10.0
    assert L.refinement_loss(2.0, 1.0, 1.0, 2.0, 2.0, 2.0) == 4.0
    assert L.refinement_loss_grad(2.0, 1.0, 1.0, 2.0, 3.0, 4.0) == (3.0, -4.0)


def test_overall_schedule():
    assert L.overall_loss(1, 1, 1, epoch=0) == 7.0
    assert L.overall_loss(1, 1, 1, epoch=25) == 12.0
    assert L.overall_loss(0, 0, 0, epoch=3) == 0.0
    assert L.overall_loss(1, 2, 3, stage_weights=(1, 1, 1)) == 6.0
    assert L.LossWeights().stage_weights(19) == (1.0, 1.0, 5.0)
    assert L.LossWeights().stage_weights(20) == (5.0, 5.0, 2.0)


def test_overall_linear():
    rng = np.random.default_rng(0)
    a, b = rng.random(3), rng.random(3)
    f = lambda v: L.overall_loss(*v, epoch=5)
    assert f(a + 2 * b) == pytest.approx(f(a) + 2 * f(b), abs=1e-12)


def test_loss_weights_negative():
    with pytest.raises(ValueError):
        L.LossWeights(lambda_x=-1.0)


# InfoNCE


def test_info_nce_uniform():
    q = np.array([1.0, 0, 0])
    keys = np.tile([0.0, 1.0, 0.0], (8, 1))
    assert L.info_nce(q, keys[0], keys[1:], tau=0.1) == pytest.approx(math.log(8), abs=1e-12)


def test_info_nce_two_way():
    # q.k+/tau = 2, q.k-/tau = 0
    q = np.array([1.0, 0.0])
    kp, kn = np.array([0.2, 0.0]), np.array([0.0, 1.0])
    assert L.info_nce(q, kp, [kn], tau=0.1) == pytest.approx(math.log(1 + math.exp(-2)), abs=1e-12)
    assert L.info_nce(q, kp, [kn], tau=0.1) == pytest.approx(0.1269, abs=1e-4)


def test_info_nce_monotone_and_nonnegative():
    rng = np.random.default_rng(1)
    q = _unit(rng, 16)
    neg = _unit(rng, (7, 16))
    vals = []
    for s in np.linspace(-1, 1, 41):
        # positive key with q.k = s
        perp = _unit(rng, 16)
        perp -= (perp @ q) * q
        perp /= np.linalg.norm(perp)
        k = s * q + math.sqrt(max(0.0, 1 - s * s)) * perp
        vals.append(L.info_nce(q, k, neg, 0.07))
    assert all(v >= 0 for v in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < vals[0]


def test_info_nce_stable_at_small_tau():
    q = np.array([1.0, 0.0])
    v = L.info_nce(q, q, [[-1.0, 0.0]], tau=1e-4)
    assert v == 0.0 or (np.isfinite(v) and v < 1e-300)


def test_info_nce_bad_tau():
    with pytest.raises(InvalidTemperatureError):
        L.info_nce([1.0], [1.0], [[1.0]], tau=0.0)


def test_keybank_queue():
    bank = L.KeyBank([[3.0, 4.0]], queue_size=2)
    assert np.allclose(bank.keys, [[0.6, 0.8]])
    bank.enqueue([[1.0, 0.0], [0.0, 2.0], [0.0, -1.0]])
    assert len(bank) == 3
    assert np.allclose(bank.keys[1:], [[0.0, 1.0], [0.0, -1.0]])


# momentum


def test_momentum_examples():
    k, q = np.zeros(4), np.ones(4)
    assert np.array_equal(L.momentum_update(k, q, 1.0), k)
    assert np.array_equal(L.momentum_update(k, q, 0.0), q)
    assert np.allclose(L.momentum_update(k, q, 0.999), 0.001)
    with pytest.raises(ShapeError):
        L.momentum_update(np.zeros(3), np.zeros(4), 0.5)


def test_momentum_geometric_convergence():
    k, q, m = np.array([5.0]), np.array([1.0]), 0.9
    for n in range(1, 30):
        k = L.momentum_update(k, q, m)
        assert k[0] - 1.0 == pytest.approx(4.0 * m**n, rel=1e-9)


# gradients against an independent finite-difference oracle


def test_info_nce_gradient_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        q, kp, neg = _unit(rng, 16), _unit(rng, 16), _unit(rng, (7, 16))
        tau = rng.uniform(0.05, 0.5)
        dq, dkp, dneg = L.info_nce_grad(q, kp, neg, tau)
        assert rel_error(dq, finite_diff(lambda x: L.info_nce(x, kp, neg, tau), q)) <= TOL
        assert rel_error(dkp, finite_diff(lambda x: L.info_nce(q, x, neg, tau), kp)) <= TOL
        assert rel_error(dneg, finite_diff(lambda x: L.info_nce(q, kp, x, tau), neg)) <= TOL


def test_proposal_gradient_oracle():
    rng = np.random.default_rng(3)
    w = L.LossWeights()
    for _ in range(20):
        pred, gt = rng.normal(size=5), rng.normal(size=5)
        if np.any(np.abs(np.abs(gt - pred) - 1) < 1e-3):
            continue
        s = rng.uniform(0.1, 1.0)
        ds, dpred = L.proposal_loss_grad(s, pred, gt, w)
        assert rel_error(dpred, finite_diff(lambda x: L.proposal_loss(s, x, gt, w), pred)) <= TOL
        assert ds == pytest.approx(finite_diff(lambda x: L.proposal_loss(x[0], pred, gt, w), [s])[0], rel=1e-6)


def test_loss_gradients_dispatch():
    assert L.loss_gradients("smooth_l1", x=0.5) == 0.5
    assert L.loss_gradients("refinement", gamma_hat=1.0, gamma=0.0, z_hat=0.0, z=1.0) == (1.0, -1.0)
    assert L.loss_gradients("overall", l_p=1, l_r=1, l_q=1, stage_weights=(1, 2, 3)) == (1.0, 2.0, 3.0)
    with pytest.raises(KeyError):
        L.loss_gradients("nope")


def test_gradcheck_suites_pass():
    results = run_all(seed=0, n_inputs=20)
    assert {r.name for r in results} == {"smooth_l1", "proposal", "refinement", "info_nce", "overall",
                                         "toy_backprop"}
    for r in results:
        assert r.passed, (r.name, r.max_rel_error)


def test_rel_error_floor():
    assert rel_error([0.0], [1e-12]) == pytest.approx(1e-4)
    assert rel_error([1.0, 0.0], [1.0, 0.0]) == 0.0
