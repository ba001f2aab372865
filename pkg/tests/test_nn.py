import numpy as np
import pytest

from telextile.nn import (
    Conv2d,
    Encoder,
    EncoderConfig,
    GlobalAvgPool,
    L2Normalize,
    Linear,
    ReLU,
    gradient_check,
)


# ---------------------------------------------------------------------------
# config


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(input_size=4)
    with pytest.raises(ValueError):
        EncoderConfig(input_size=16, conv_stages=())
    with pytest.raises(ValueError):
        EncoderConfig(input_size=16, conv_stages=((8, 3, 0),))
    with pytest.raises(ValueError):
        EncoderConfig(input_size=16, embedding_dim=1)


def test_desk_default_geometry():
    cfg = EncoderConfig.desk_default()
    assert cfg.input_size == 56
    assert cfg.stage_sizes() == [28, 14, 7, 4]
    assert cfg.embedding_dim == 64


def test_param_count_matches_actual_tensors(tiny_enc_cfg):
    enc = Encoder(tiny_enc_cfg, seed=0)
    assert enc.num_params() == tiny_enc_cfg.param_count()
    assert sum(p.size for p in enc.params) == tiny_enc_cfg.param_count()


def test_config_dict_roundtrip(tiny_enc_cfg):
    assert EncoderConfig.from_dict(tiny_enc_cfg.to_dict()) == tiny_enc_cfg
    # JSON loses tuples; lists must coerce back
    import json
    assert EncoderConfig.from_dict(json.loads(json.dumps(tiny_enc_cfg.to_dict()))) == tiny_enc_cfg


# ---------------------------------------------------------------------------
# layers against direct computations


def test_conv_matches_explicit_loops():
    rng = np.random.default_rng(0)
    conv = Conv2d(2, 3, ksize=3, stride=2, rng=rng, dtype=np.float64)
    x = rng.standard_normal((1, 2, 7, 7))
    y, _ = conv.forward(x)
    pad = 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    expect = np.zeros_like(y)
    for oc in range(3):
        for i in range(y.shape[2]):
            for j in range(y.shape[3]):
                patch = xp[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
                expect[0, oc, i, j] = (patch * conv.weight[oc]).sum() + conv.bias[oc]
    np.testing.assert_allclose(y, expect, atol=1e-12)


def test_relu_forward_backward():
    relu = ReLU()
    x = np.array([[-1.0, 0.0, 2.0]])
    y, cache = relu.forward(x)
    np.testing.assert_array_equal(y, [[0.0, 0.0, 2.0]])
    dx, grads = relu.backward(cache, np.ones_like(x))
    np.testing.assert_array_equal(dx, [[0.0, 0.0, 1.0]])
    assert grads == []


def test_global_avg_pool():
    pool = GlobalAvgPool()
    x = np.arange(2 * 3 * 2 * 2, dtype=np.float64).reshape(2, 3, 2, 2)
    y, cache = pool.forward(x)
    np.testing.assert_allclose(y, x.mean(axis=(2, 3)))
    dx, _ = pool.backward(cache, np.ones_like(y))
    np.testing.assert_allclose(dx, np.full_like(x, 0.25))


def test_linear_matches_matmul():
    rng = np.random.default_rng(1)
    lin = Linear(4, 3, rng=rng, dtype=np.float64)
    x = rng.standard_normal((5, 4))
    y, _ = lin.forward(x)
    np.testing.assert_allclose(y, x @ lin.weight.T + lin.bias, atol=1e-12)


def test_l2_normalize_unit_rows():
    norm = L2Normalize()
    x = np.array([[3.0, 4.0], [0.1, 0.0]])
    y, _ = norm.forward(x)
    np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(y[0], [0.6, 0.8], atol=1e-12)


def test_l2_normalize_gradient_is_tangent():
    # the backward pass projects out the radial component, so the
    # propagated gradient must be orthogonal to the normalized output
    rng = np.random.default_rng(2)
    norm = L2Normalize()
    x = rng.standard_normal((4, 6))
    y, cache = norm.forward(x)
    dy = rng.standard_normal(y.shape)
    dx, _ = norm.backward(cache, dy)
    np.testing.assert_allclose((dx * x).sum(axis=1) / np.linalg.norm(x, axis=1),
                               0.0, atol=1e-10)


# ---------------------------------------------------------------------------
# encoder


def test_encoder_output_is_unit_norm(tiny_enc_cfg, rng):
    enc = Encoder(tiny_enc_cfg, seed=0)
    x = rng.random((4, 3, 16, 16)).astype(np.float32)
    emb, _ = enc.forward(x)
    assert emb.shape == (4, tiny_enc_cfg.embedding_dim)
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-5)


def test_encoder_rejects_wrong_geometry(tiny_enc_cfg, rng):
    enc = Encoder(tiny_enc_cfg, seed=0)
    with pytest.raises(ValueError):
        enc.forward(rng.random((2, 3, 8, 8)).astype(np.float32))
    with pytest.raises(ValueError):
        enc.forward(rng.random((2, 1, 16, 16)).astype(np.float32))


def test_encoder_deterministic_init_and_forward(tiny_enc_cfg, rng):
    a = Encoder(tiny_enc_cfg, seed=3)
    b = Encoder(tiny_enc_cfg, seed=3)
    c = Encoder(tiny_enc_cfg, seed=4)
    np.testing.assert_array_equal(a.get_flat_params(), b.get_flat_params())
    assert not np.array_equal(a.get_flat_params(), c.get_flat_params())
    x = rng.random((2, 3, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(a.forward(x)[0], b.forward(x)[0])


def test_flat_params_roundtrip(tiny_enc_cfg):
    enc = Encoder(tiny_enc_cfg, seed=0)
    flat = enc.get_flat_params()
    other = Encoder(tiny_enc_cfg, seed=9)
    other.set_flat_params(flat)
    np.testing.assert_array_equal(other.get_flat_params(), flat)
    with pytest.raises(ValueError):
        other.set_flat_params(flat[:-1])


def test_copy_and_clone_are_independent(tiny_enc_cfg, rng):
    a = Encoder(tiny_enc_cfg, seed=0)
    b = a.clone()
    np.testing.assert_array_equal(a.get_flat_params(), b.get_flat_params())
    b.params[0][...] += 1.0
    assert not np.array_equal(a.params[0], b.params[0])
    c = Encoder(tiny_enc_cfg, seed=5)
    c.copy_params_from(a)
    np.testing.assert_array_equal(c.get_flat_params(), a.get_flat_params())


def test_embed_frames_matches_manual_inference(tiny_frames, tiny_aug, tiny_enc_cfg):
    from telextile.augment import inference_view
    enc = Encoder(tiny_enc_cfg, seed=0)
    frames = tiny_frames[0][:5]
    emb = enc.embed_frames(frames, tiny_aug, batch_size=2)
    assert emb.shape == (5, tiny_enc_cfg.embedding_dim)
    views = np.stack([inference_view(f, tiny_aug).transpose(2, 0, 1) for f in frames])
    manual, _ = enc.forward(views)
    np.testing.assert_allclose(emb, manual, atol=1e-6)


# ---------------------------------------------------------------------------
# gradients


def test_gradient_check_tiny_config(rng):
    cfg = EncoderConfig(input_size=12, conv_stages=((4, 3, 2), (6, 3, 2)),
                        embedding_dim=5)
    enc = Encoder(cfg, seed=0, dtype=np.float64)
    x = rng.standard_normal((3, 3, 12, 12))
    errors = gradient_check(enc, x, seed=1)
    assert len(errors) == len(enc.params)
    assert max(errors) < 1e-6


def test_gradient_check_whole_tensor(rng):
    # exhaustive over every coordinate of a very small net
    cfg = EncoderConfig(input_size=8, conv_stages=((2, 3, 2),), embedding_dim=2)
    enc = Encoder(cfg, seed=0, dtype=np.float64)
    x = rng.standard_normal((2, 3, 8, 8))
    errors = gradient_check(enc, x, samples_per_tensor=None, seed=1)
    assert max(errors) < 1e-6


def test_backward_input_gradient_finite_difference(rng):
    # backward also returns nothing for inputs, so check parameter grads by
    # a direct loss probe on one conv weight
    cfg = EncoderConfig(input_size=8, conv_stages=((3, 3, 2),), embedding_dim=3)
    enc = Encoder(cfg, seed=2, dtype=np.float64)
    x = rng.standard_normal((2, 3, 8, 8))
    g = rng.standard_normal((2, 3))
    emb, caches = enc.forward(x)
    grads = enc.backward(caches, g)
    eps = 1e-6
    p = enc.params[0]
    p[0, 0, 0, 0] += eps
    up = float((enc.forward(x)[0] * g).sum())
    p[0, 0, 0, 0] -= 2 * eps
    down = float((enc.forward(x)[0] * g).sum())
    p[0, 0, 0, 0] += eps
    numeric = (up - down) / (2 * eps)
    assert abs(numeric - grads[0][0, 0, 0, 0]) < 1e-6
