import math

import numpy as np
import pytest

from telextile.moco import (
    TrainConfig,
    _NegativeQueue,
    info_nce_loss,
    knn_top1,
    momentum_update,
    sgd_step,
)


# ---------------------------------------------------------------------------
# InfoNCE loss values


def test_loss_single_pair_one_negative():
    # q = k = e_x, one negative e_y: loss = -ln(e / (e + 1)) = ln(1 + e^-1)
    q = np.array([[1.0, 0.0]])
    k = np.array([[1.0, 0.0]])
    queue = np.array([[0.0, 1.0]])
    loss, _ = info_nce_loss(q, k, queue, temperature=1.0)
    assert loss == pytest.approx(math.log(1.0 + math.exp(-1.0)), abs=1e-9)
    assert loss == pytest.approx(0.31326, abs=1e-5)


def test_loss_orthogonal_configuration_is_log_q_plus_one():
    # positive and all negatives equidistant from the query: uniform softmax
    dim, q_size = 8, 5
    q = np.zeros((3, dim))
    q[:, 0] = 1.0
    k = np.zeros((3, dim))
    k[:, 1] = 1.0
    queue = np.zeros((q_size, dim))
    for i in range(q_size):
        queue[i, 2 + i] = 1.0
    loss, _ = info_nce_loss(q, k, queue, temperature=0.07)
    assert round(loss, 4) == round(math.log(q_size + 1), 4)


def test_loss_decreases_as_query_aligns_with_positive():
    rng = np.random.default_rng(0)
    k = rng.standard_normal((4, 8))
    k /= np.linalg.norm(k, axis=1, keepdims=True)
    queue = rng.standard_normal((16, 8))
    queue /= np.linalg.norm(queue, axis=1, keepdims=True)
    far = rng.standard_normal((4, 8))
    far /= np.linalg.norm(far, axis=1, keepdims=True)
    loss_far, _ = info_nce_loss(far, k, queue, temperature=0.2)
    loss_near, _ = info_nce_loss(k, k, queue, temperature=0.2)
    assert loss_near < loss_far


def test_loss_rejects_bad_inputs():
    q = np.ones((1, 2))
    with pytest.raises(ValueError):
        info_nce_loss(q, q, np.ones((1, 2)), temperature=0.0)
    with pytest.raises(ValueError):
        info_nce_loss(q, q, np.empty((0, 2)), temperature=1.0)


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    q = rng.standard_normal((5, 6))
    k = rng.standard_normal((5, 6))
    queue = rng.standard_normal((12, 6))
    _, dq = info_nce_loss(q, k, queue, temperature=0.07)
    eps = 1e-6
    for probe in [(0, 0), (2, 3), (4, 5)]:
        qp = q.copy(); qp[probe] += eps
        qm = q.copy(); qm[probe] -= eps
        up, _ = info_nce_loss(qp, k, queue, temperature=0.07)
        down, _ = info_nce_loss(qm, k, queue, temperature=0.07)
        numeric = (up - down) / (2 * eps)
        assert abs(numeric - dq[probe]) / max(abs(numeric), 1e-8) < 1e-3


def test_loss_temperature_sharpens_gradients():
    rng = np.random.default_rng(4)
    q = rng.standard_normal((3, 4))
    k = rng.standard_normal((3, 4))
    queue = rng.standard_normal((8, 4))
    _, dq_sharp = info_nce_loss(q, k, queue, temperature=0.05)
    _, dq_soft = info_nce_loss(q, k, queue, temperature=1.0)
    assert np.abs(dq_sharp).max() > np.abs(dq_soft).max()


# ---------------------------------------------------------------------------
# optimizer steps


def _cfg(**kw):
    base = dict(learning_rate=0.1, momentum=0.0, weight_decay=0.0,
                epochs=1, batch_size=1, queue_size=1)
    base.update(kw)
    return TrainConfig(**base)


def test_sgd_plain_step():
    p = [np.array([1.0])]
    v = [np.zeros(1)]
    sgd_step(p, [np.array([0.1])], v, _cfg())
    assert p[0][0] == pytest.approx(0.99, abs=1e-12)


def test_sgd_momentum_accumulates():
    # v1 = 0.1, p1 = 0.99; v2 = 0.9*0.1 + 0.1 = 0.19, p2 = 0.99 - 0.019 = 0.971
    p = [np.array([1.0])]
    v = [np.zeros(1)]
    cfg = _cfg(momentum=0.9)
    sgd_step(p, [np.array([0.1])], v, cfg)
    sgd_step(p, [np.array([0.1])], v, cfg)
    assert v[0][0] == pytest.approx(0.19, abs=1e-12)
    assert p[0][0] == pytest.approx(0.971, abs=1e-12)


def test_sgd_weight_decay_pulls_toward_zero():
    p = [np.array([1.0])]
    v = [np.zeros(1)]
    sgd_step(p, [np.array([0.0])], v, _cfg(weight_decay=0.5))
    # effective gradient 0.5*1.0, lr 0.1 -> p = 0.95
    assert p[0][0] == pytest.approx(0.95, abs=1e-12)


def test_momentum_update_ema():
    key = [np.array([0.0])]
    query = [np.array([1.0])]
    momentum_update(key, query, 0.999)
    assert key[0][0] == pytest.approx(0.001, abs=1e-12)
    momentum_update(key, query, 0.999)
    assert key[0][0] == pytest.approx(0.001999, abs=1e-9)
    with pytest.raises(ValueError):
        momentum_update(key, query, 1.5)


def test_momentum_update_fixed_point():
    key = [np.array([0.3, -0.2])]
    query = [key[0].copy()]
    momentum_update(key, query, 0.999)
    np.testing.assert_allclose(key[0], query[0], atol=1e-15)


# ---------------------------------------------------------------------------
# negative queue


def test_queue_fifo_wraparound():
    q = _NegativeQueue(np.zeros((4, 2), dtype=np.float32))
    q.push(np.array([[1, 0], [2, 0]], dtype=np.float32))
    q.push(np.array([[3, 0], [4, 0]], dtype=np.float32))
    np.testing.assert_array_equal(q.view()[:, 0], [1, 2, 3, 4])
    # the next push overwrites the oldest entries
    q.push(np.array([[5, 0], [6, 0]], dtype=np.float32))
    np.testing.assert_array_equal(q.view()[:, 0], [5, 6, 3, 4])


def test_queue_oversized_push_keeps_newest():
    q = _NegativeQueue(np.zeros((3, 1), dtype=np.float32))
    q.push(np.arange(5, dtype=np.float32).reshape(5, 1))
    assert set(q.view()[:, 0].tolist()) == {2.0, 3.0, 4.0}


def test_queue_capacity_is_fixed():
    q = _NegativeQueue(np.zeros((8, 2), dtype=np.float32))
    for i in range(10):
        q.push(np.full((3, 2), i, dtype=np.float32))
        assert q.view().shape == (8, 2)


# ---------------------------------------------------------------------------
# kNN scoring


def test_knn_top1_exact_fraction():
    train = np.array([[1.0, 0.0], [0.0, 1.0]])
    labels = ["a", "b"]
    test = np.array([[0.9, 0.1], [0.1, 0.9], [0.8, 0.2]])
    test /= np.linalg.norm(test, axis=1, keepdims=True)
    assert knn_top1(train, labels, test, ["a", "b", "b"]) == pytest.approx(2 / 3)
    assert knn_top1(train, labels, np.empty((0, 2)), []) == 0.0


# ---------------------------------------------------------------------------
# config validation


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(temperature=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError):
        TrainConfig(queue_size=8, batch_size=16)
    with pytest.raises(ValueError):
        TrainConfig(key_momentum=0.0)


def test_train_config_defaults_and_roundtrip():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.momentum, cfg.weight_decay) == (0.03, 0.9, 1e-4)
    assert (cfg.epochs, cfg.batch_size, cfg.queue_size) == (200, 32, 1024)
    assert (cfg.key_momentum, cfg.temperature) == (0.999, 0.07)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert TrainConfig.desk_default().epochs == 40
