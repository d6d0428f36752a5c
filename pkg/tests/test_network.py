import numpy as np
import pytest

from drumscribe.nn.network import (
    NetworkConfig,
    ShapeError,
    forward,
    init_params,
    loss,
    loss_and_gradients,
    training_loss,
)
from oracles import sampled_network_fd_check

CFG = NetworkConfig(n_classes=7, n_bins=250)
SMALL = NetworkConfig(n_classes=3, n_bins=40)


def small_batch(cfg, B=2, T=12, seed=0, dtype=np.float64, onset_rate=0.1):
    rng = np.random.default_rng(seed)
    spec = rng.standard_normal((B, T, cfg.n_bins)).astype(dtype)
    onsets = (rng.random((B, T, cfg.n_classes)) < onset_rate).astype(dtype)
    vels = (onsets * rng.random((B, T, cfg.n_classes))).astype(dtype)
    return spec, onsets, vels


def test_output_shapes_preserve_time():
    params, state = init_params(CFG, seed=0)
    spec = np.zeros((1, 1200, 250), dtype=np.float32)
    probs, vels, _, _ = forward(CFG, params, state, spec)
    assert probs.shape == (1, 1200, 7)
    assert vels.shape == (1, 1200, 7)


def test_zero_weights_give_half_probs_and_zero_velocities():
    params, state = init_params(SMALL, seed=0, dtype=np.float64)
    for key in params:
        params[key] = np.zeros_like(params[key])
    spec, _, _ = small_batch(SMALL)
    probs, vels, _, _ = forward(SMALL, params, state, spec)
    assert np.allclose(probs, 0.5, atol=1e-12)
    assert np.allclose(vels, 0.0, atol=1e-12)


def test_eval_forward_is_deterministic():
    params, state = init_params(SMALL, seed=1)
    spec, _, _ = small_batch(SMALL, dtype=np.float32)
    a = forward(SMALL, params, state, spec.astype(np.float32))
    b = forward(SMALL, params, state, spec.astype(np.float32))
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])


def test_bin_mismatch_raises():
    params, state = init_params(SMALL, seed=0)
    with pytest.raises(ShapeError):
        forward(SMALL, params, state, np.zeros((1, 10, 41)))


def test_loss_closed_forms():
    # probs == 0.5 with empty labels -> BCE = ln 2, no velocity term.
    probs = np.full((1, 10, 7), 0.5)
    vels = np.zeros_like(probs)
    total, bce, vel = loss(probs, vels, np.zeros_like(probs), np.zeros_like(probs))
    assert bce == pytest.approx(np.log(2), abs=1e-12)
    assert vel == 0.0
    assert total == pytest.approx(np.log(2), abs=1e-12)


def test_loss_velocity_term_masked():
    # One labeled onset, target velocity 1, prediction 0: total velocity
    # contribution is 0.5 * 1.0.
    onsets = np.zeros((1, 4, 2))
    onsets[0, 1, 0] = 1.0
    targets = np.zeros_like(onsets)
    targets[0, 1, 0] = 1.0
    probs = np.where(onsets > 0, 1.0 - 1e-7, 1e-7)
    vels = np.zeros_like(onsets)
    total, bce, vel_mse = loss(probs, vels, onsets, targets)
    assert vel_mse == pytest.approx(1.0)
    assert total == pytest.approx(bce + 0.5)
    assert bce < 1e-5


def test_loss_perfect_predictions_near_zero():
    onsets = np.zeros((1, 5, 3))
    onsets[0, 2, 1] = 1.0
    targets = onsets * 0.7
    probs = np.where(onsets > 0, 1.0 - 1e-7, 1e-7)
    total, _, _ = loss(probs, onsets * 0.7, onsets, targets)
    assert total <= 1e-5


def test_loss_rejects_nan():
    bad = np.full((1, 2, 2), np.nan)
    with pytest.raises(FloatingPointError):
        loss(bad, bad, np.zeros_like(bad), np.zeros_like(bad))


def test_loss_and_gradients_matches_public_loss():
    params, state = init_params(SMALL, seed=3, dtype=np.float64)
    spec, onsets, vels = small_batch(SMALL, seed=4)
    total, bce, vel_mse, grads, _ = loss_and_gradients(
        SMALL, params, state, spec, onsets, vels, rng=np.random.default_rng(0), train=True
    )
    # Evaluate the same batch through the probability-space loss.
    probs, velocities, caches, _ = forward(SMALL, params, state, spec, train=True, rng=np.random.default_rng(0))
    total_pub, bce_pub, vel_pub = loss(probs, velocities, onsets, vels)
    assert total == pytest.approx(total_pub, rel=1e-9)
    assert bce == pytest.approx(bce_pub, rel=1e-9)
    assert vel_mse == pytest.approx(vel_pub, rel=1e-9)


def test_gradient_determinism():
    params, state = init_params(SMALL, seed=5, dtype=np.float32)
    spec, onsets, vels = small_batch(SMALL, seed=6, dtype=np.float32)
    out1 = loss_and_gradients(SMALL, params, state, spec, onsets, vels, rng=np.random.default_rng(9))
    out2 = loss_and_gradients(SMALL, params, state, spec, onsets, vels, rng=np.random.default_rng(9))
    assert out1[0] == out2[0]
    for key in out1[3]:
        assert np.array_equal(out1[3][key], out2[3][key]), key


def test_zero_input_zero_label_conv1_weight_grads_vanish():
    params, state = init_params(SMALL, seed=7, dtype=np.float64)
    spec = np.zeros((2, 8, SMALL.n_bins))
    onsets = np.zeros((2, 8, SMALL.n_classes))
    *_, grads, _ = loss_and_gradients(
        SMALL, params, state, spec, onsets, onsets, rng=np.random.default_rng(0), train=True
    )
    assert np.allclose(grads["onset/conv1/w"], 0.0, atol=1e-12)
    assert np.allclose(grads["velocity/conv1/w"], 0.0, atol=1e-12)


def test_full_network_gradient_check_float64():
    params, state = init_params(SMALL, seed=11, dtype=np.float64)
    spec, onsets, vels = small_batch(SMALL, B=2, T=10, seed=12, onset_rate=0.2)
    total, _, _, grads, _ = loss_and_gradients(
        SMALL, params, state, spec, onsets, vels, rng=np.random.default_rng(21), train=True
    )
    errors = sampled_network_fd_check(
        SMALL, params, state, spec, onsets, vels, drop_seed=21, grads=grads, samples_per_tensor=6
    )
    worst = max(errors.values())
    assert worst < 1e-6, sorted(errors.items(), key=lambda kv: -kv[1])[:5]


def test_eval_time_equivariance():
    # Delaying input rows shifts both outputs. The graph has no time pooling,
    # so rows match exactly up to (a) conv padding at the edges and (b) the
    # bidirectional LSTM state transient, which decays over ~100 frames from
    # either sequence end; compare the interior band only.
    params, state = init_params(CFG, seed=13, dtype=np.float32)
    rng = np.random.default_rng(14)
    T, k, margin = 400, 5, 150
    x = rng.standard_normal((T, CFG.n_bins)).astype(np.float32)
    silence = np.full((k, CFG.n_bins), x.min(), dtype=np.float32)
    delayed = np.concatenate([silence, x])[:T]
    base_probs, base_vels, _, _ = forward(CFG, params, state, x[None])
    shift_probs, shift_vels, _, _ = forward(CFG, params, state, delayed[None])
    rows = slice(margin + k, T - margin)
    src = slice(margin, T - margin - k)
    np.testing.assert_allclose(shift_probs[0, rows], base_probs[0, src], atol=1e-4)
    np.testing.assert_allclose(shift_vels[0, rows], base_vels[0, src], atol=1e-4)


def test_training_loss_matches_loss_and_gradients():
    params, state = init_params(SMALL, seed=15, dtype=np.float64)
    spec, onsets, vels = small_batch(SMALL, seed=16)
    total, *_ = loss_and_gradients(SMALL, params, state, spec, onsets, vels, rng=np.random.default_rng(3))
    scalar = training_loss(SMALL, params, state, spec, onsets, vels, rng=np.random.default_rng(3))
    assert scalar == pytest.approx(total, rel=1e-12)
