"""The onset + velocity prediction network.

Two stacks share one architecture trunk but no weights:

* onset stack:  conv(16) BN relu, conv(16) BN relu, pool, drop, conv(32) BN
  relu, pool, drop, dense(256) relu, drop, BiLSTM(64), drop, dense(C) with a
  sigmoid output;
* velocity stack: the same trunk without the BiLSTM, linear dense(C) output.

Pooling halves only the frequency axis twice (250 -> 125 -> 62); time
resolution is preserved end to end. The training loss is sigmoid cross
entropy over every cell plus 0.5 times the velocity mean squared error taken
only over the labeled onset cells.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

from . import layers
from .layers import (
    batchnorm_backward,
    batchnorm_forward,
    bilstm_backward,
    bilstm_forward,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    maxpool_freq_backward,
    maxpool_freq_forward,
    relu_backward,
    relu_forward,
)

CONV_CHANNELS = (16, 16, 32)
DENSE_UNITS = 256
LSTM_UNITS = 64
VELOCITY_LOSS_WEIGHT = 0.5
KEEP_CONV = 0.75
KEEP_DENSE = 0.5
KEEP_LSTM_OUT = 0.5
PROB_EPS = 1e-7
# Onset detections are sparse (a few percent of cells); starting the output
# bias at the prior's logit keeps early training out of the saturated
# "predict nothing" regime that otherwise stalls small-data runs.
ONSET_BIAS_INIT = -4.0


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    n_classes: int = 7
    n_bins: int = 250

    @property
    def flat_features(self) -> int:
        return (self.n_bins // 2 // 2) * CONV_CHANNELS[2]


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _orthogonal_gates(rng: np.random.Generator, units: int, dtype) -> np.ndarray:
    blocks = []
    for _ in range(4):
        m = rng.standard_normal((units, units))
        q, r = np.linalg.qr(m)
        q *= np.sign(np.diag(r))
        blocks.append(q)
    return np.concatenate(blocks, axis=1).astype(dtype)


def init_params(
    cfg: NetworkConfig,
    seed: int = 0,
    dtype=np.float32,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Initialize all learnable tensors and the batch-norm running statistics.

    Conv/dense weights use fan-in scaled uniforms, recurrent matrices are
    orthogonal per gate, and the LSTM forget-gate bias starts at 1.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    state: dict[str, np.ndarray] = {}
    c1, c2, c3 = CONV_CHANNELS
    for stack in ("onset", "velocity"):
        shapes = [(3, 3, 1, c1), (3, 3, c1, c2), (3, 3, c2, c3)]
        for i, shape in enumerate(shapes, start=1):
            fan_in = shape[0] * shape[1] * shape[2]
            params[f"{stack}/conv{i}/w"] = _uniform(rng, shape, fan_in, dtype)
            params[f"{stack}/conv{i}/b"] = np.zeros(shape[3], dtype=dtype)
            params[f"{stack}/bn{i}/gamma"] = np.ones(shape[3], dtype=dtype)
            params[f"{stack}/bn{i}/beta"] = np.zeros(shape[3], dtype=dtype)
            state[f"{stack}/bn{i}/mean"] = np.zeros(shape[3], dtype=dtype)
            state[f"{stack}/bn{i}/var"] = np.ones(shape[3], dtype=dtype)
        params[f"{stack}/dense1/w"] = _uniform(rng, (cfg.flat_features, DENSE_UNITS), cfg.flat_features, dtype)
        params[f"{stack}/dense1/b"] = np.zeros(DENSE_UNITS, dtype=dtype)
    for direction in ("fw", "bw"):
        params[f"onset/lstm/{direction}/wx"] = _uniform(rng, (DENSE_UNITS, 4 * LSTM_UNITS), DENSE_UNITS, dtype)
        params[f"onset/lstm/{direction}/wh"] = _orthogonal_gates(rng, LSTM_UNITS, dtype)
        bias = np.zeros(4 * LSTM_UNITS, dtype=dtype)
        bias[LSTM_UNITS : 2 * LSTM_UNITS] = 1.0  # forget gate opens at init
        params[f"onset/lstm/{direction}/b"] = bias
    params["onset/out/w"] = _uniform(rng, (2 * LSTM_UNITS, cfg.n_classes), 2 * LSTM_UNITS, dtype)
    params["onset/out/b"] = np.full(cfg.n_classes, ONSET_BIAS_INIT, dtype=dtype)
    params["velocity/out/w"] = _uniform(rng, (DENSE_UNITS, cfg.n_classes), DENSE_UNITS, dtype)
    params["velocity/out/b"] = np.zeros(cfg.n_classes, dtype=dtype)
    return params, state


def _trunk_forward(params, state, stack, x, train, rng, caches, new_state, keep_conv, keep_dense):
    h = x
    for i in (1, 2, 3):
        h, conv_cache = conv2d_forward(h, params[f"{stack}/conv{i}/w"], params[f"{stack}/conv{i}/b"])
        h, bn_cache, mean, var = batchnorm_forward(
            h,
            params[f"{stack}/bn{i}/gamma"],
            params[f"{stack}/bn{i}/beta"],
            state[f"{stack}/bn{i}/mean"],
            state[f"{stack}/bn{i}/var"],
            train,
        )
        new_state[f"{stack}/bn{i}/mean"] = mean
        new_state[f"{stack}/bn{i}/var"] = var
        h, relu_cache = relu_forward(h)
        caches[f"{stack}/conv{i}"] = conv_cache
        caches[f"{stack}/bn{i}"] = bn_cache
        caches[f"{stack}/relu{i}"] = relu_cache
        if i >= 2:
            h, pool_cache = maxpool_freq_forward(h)
            h, drop_cache = dropout_forward(h, keep_conv, rng, train)
            caches[f"{stack}/pool{i}"] = pool_cache
            caches[f"{stack}/drop{i}"] = drop_cache
    B, T = h.shape[0], h.shape[1]
    h = h.reshape(B, T, -1)
    h, dense_cache = dense_forward(h, params[f"{stack}/dense1/w"], params[f"{stack}/dense1/b"])
    h, relu_cache = relu_forward(h)
    h, drop_cache = dropout_forward(h, keep_dense, rng, train)
    caches[f"{stack}/dense1"] = dense_cache
    caches[f"{stack}/relu_dense"] = relu_cache
    caches[f"{stack}/drop_dense"] = drop_cache
    return h


def forward(
    cfg: NetworkConfig,
    params: dict,
    state: dict,
    spec_batch: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
    keep_probs: tuple[float, float, float] = (KEEP_CONV, KEEP_DENSE, KEEP_LSTM_OUT),
):
    """Run both stacks.

    Returns (onset_probs, velocities, cache, new_state); ``cache`` carries
    everything the backward pass needs (and the pre-sigmoid logits).
    Eval mode uses running batch-norm statistics and no dropout, so it is
    deterministic and thread safe.
    """
    x = np.asarray(spec_batch)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"expected (batch, frames, bins) input, got shape {x.shape}")
    if x.shape[2] != cfg.n_bins:
        raise ShapeError(f"expected {cfg.n_bins} bins, got {x.shape[2]}")
    if train and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")
    x = x[..., None]  # (B, T, F, 1)
    keep_conv, keep_dense, keep_lstm = keep_probs

    caches: dict = {}
    new_state = dict(state)
    h_on = _trunk_forward(params, state, "onset", x, train, rng, caches, new_state, keep_conv, keep_dense)
    h_on, lstm_cache = bilstm_forward(h_on, params, "onset/lstm")
    h_on, lstm_drop = dropout_forward(h_on, keep_lstm, rng, train)
    logits, out_cache = dense_forward(h_on, params["onset/out/w"], params["onset/out/b"])
    caches["onset/lstm"] = lstm_cache
    caches["onset/lstm_drop"] = lstm_drop
    caches["onset/out"] = out_cache

    h_vel = _trunk_forward(params, state, "velocity", x, train, rng, caches, new_state, keep_conv, keep_dense)
    velocities, vel_out_cache = dense_forward(h_vel, params["velocity/out/w"], params["velocity/out/b"])
    caches["velocity/out"] = vel_out_cache
    caches["logits"] = logits

    onset_probs = sigmoid(logits)
    return onset_probs, velocities, caches, new_state


def loss(onset_probs: np.ndarray, velocities: np.ndarray, onsets: np.ndarray, velocity_targets: np.ndarray):
    """Combined loss: mean BCE over all cells + 0.5 * MSE over onset cells.

    Returns (total, bce, velocity_mse). Probabilities are clipped to
    [1e-7, 1 - 1e-7] before the log.
    """
    for name, arr in (("onset_probs", onset_probs), ("velocities", velocities)):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite values in {name}")
    if onset_probs.shape != onsets.shape or velocities.shape != velocity_targets.shape:
        raise ShapeError("prediction and label shapes must match")
    p = np.clip(onset_probs, PROB_EPS, 1.0 - PROB_EPS)
    bce = float(-np.mean(onsets * np.log(p) + (1.0 - onsets) * np.log1p(-p)))
    mask = onsets > 0.5
    if mask.any():
        vel_mse = float(np.mean(np.square(velocities[mask] - velocity_targets[mask])))
    else:
        vel_mse = 0.0
    return bce + VELOCITY_LOSS_WEIGHT * vel_mse, bce, vel_mse


def training_loss(
    cfg: NetworkConfig,
    params: dict,
    state: dict,
    spec_batch: np.ndarray,
    onsets: np.ndarray,
    velocity_targets: np.ndarray,
    rng: np.random.Generator | None,
    train: bool = True,
    keep_probs: tuple[float, float, float] = (KEEP_CONV, KEEP_DENSE, KEEP_LSTM_OUT),
    velocity_weight: float = VELOCITY_LOSS_WEIGHT,
) -> float:
    """The scalar the optimizer descends: forward pass only, loss from logits."""
    onsets = np.asarray(onsets)
    velocity_targets = np.asarray(velocity_targets)
    if onsets.ndim == 2:
        onsets = onsets[None]
        velocity_targets = velocity_targets[None]
    _, velocities, caches, _ = forward(cfg, params, state, spec_batch, train=train, rng=rng, keep_probs=keep_probs)
    logits = caches["logits"]
    bce = float(np.mean(np.logaddexp(0.0, logits) - onsets * logits))
    mask = onsets > 0.5
    if mask.any():
        vel_mse = float(np.mean(np.square(velocities[mask] - velocity_targets[mask])))
    else:
        vel_mse = 0.0
    return bce + velocity_weight * vel_mse


def loss_and_gradients(
    cfg: NetworkConfig,
    params: dict,
    state: dict,
    spec_batch: np.ndarray,
    onsets: np.ndarray,
    velocity_targets: np.ndarray,
    rng: np.random.Generator | None,
    train: bool = True,
    keep_probs: tuple[float, float, float] = (KEEP_CONV, KEEP_DENSE, KEEP_LSTM_OUT),
    velocity_weight: float = VELOCITY_LOSS_WEIGHT,
):
    """Forward in the given mode, then reverse-mode gradients for every tensor.

    The BCE term is differentiated from the logits (numerically exact form);
    ``loss()`` on the returned probabilities agrees to rounding error.
    Returns (total, bce, vel_mse, grads, new_state).
    """
    onsets = np.asarray(onsets, dtype=params["onset/out/w"].dtype)
    velocity_targets = np.asarray(velocity_targets, dtype=onsets.dtype)
    if onsets.ndim == 2:
        onsets = onsets[None]
        velocity_targets = velocity_targets[None]
    onset_probs, velocities, caches, new_state = forward(
        cfg, params, state, spec_batch, train=train, rng=rng, keep_probs=keep_probs
    )
    if onset_probs.shape != onsets.shape:
        raise ShapeError(f"label shape {onsets.shape} does not match output {onset_probs.shape}")

    logits = caches["logits"]
    n_cells = logits.size
    # BCE from logits: d/dlogit mean BCE = (sigmoid - y) / n
    bce = float(np.mean(np.logaddexp(0.0, logits) - onsets * logits))
    dlogits = (onset_probs - onsets) / n_cells

    mask = onsets > 0.5
    n_masked = int(mask.sum())
    if n_masked:
        diff = np.where(mask, velocities - velocity_targets, 0.0).astype(velocities.dtype)
        vel_mse = float(np.sum(np.square(diff)) / n_masked)
        dvel = (2.0 * velocity_weight / n_masked) * diff
    else:
        vel_mse = 0.0
        dvel = np.zeros_like(velocities)

    grads: dict[str, np.ndarray] = {}

    # Onset head.
    dh, dw, db = dense_backward(dlogits.astype(logits.dtype), caches["onset/out"])
    grads["onset/out/w"], grads["onset/out/b"] = dw, db
    dh = dropout_backward(dh, caches["onset/lstm_drop"])
    dh, lstm_grads = bilstm_backward(dh, caches["onset/lstm"])
    for key, value in lstm_grads.items():
        grads[f"onset/lstm/{key}"] = value
    _backward_trunk(params, "onset", caches, dh, grads)

    # Velocity head.
    dh, dw, db = dense_backward(dvel, caches["velocity/out"])
    grads["velocity/out/w"], grads["velocity/out/b"] = dw, db
    _backward_trunk(params, "velocity", caches, dh, grads)

    total = bce + velocity_weight * vel_mse
    return total, bce, vel_mse, grads, new_state


def _backward_trunk(params, stack, caches, dh, grads):
    dh = dropout_backward(dh, caches[f"{stack}/drop_dense"])
    dh = relu_backward(dh, caches[f"{stack}/relu_dense"])
    dh, dw, db = dense_backward(dh, caches[f"{stack}/dense1"])
    grads[f"{stack}/dense1/w"], grads[f"{stack}/dense1/b"] = dw, db
    # Un-flatten back to (B, T, F', C3).
    pool_idx, pooled_shape = caches[f"{stack}/pool3"]
    B, T, F, C = pooled_shape
    dh = dh.reshape(B, T, F // 2, C)
    for i in (3, 2):
        dh = dropout_backward(dh, caches[f"{stack}/drop{i}"])
        dh = maxpool_freq_backward(dh, caches[f"{stack}/pool{i}"])
        dh = relu_backward(dh, caches[f"{stack}/relu{i}"])
        dh, dgamma, dbeta = batchnorm_backward(dh, caches[f"{stack}/bn{i}"])
        grads[f"{stack}/bn{i}/gamma"], grads[f"{stack}/bn{i}/beta"] = dgamma, dbeta
        dh, dw, db = conv2d_backward(dh, caches[f"{stack}/conv{i}"])
        grads[f"{stack}/conv{i}/w"], grads[f"{stack}/conv{i}/b"] = dw, db
    dh = relu_backward(dh, caches[f"{stack}/relu1"])
    dh, dgamma, dbeta = batchnorm_backward(dh, caches[f"{stack}/bn1"])
    grads[f"{stack}/bn1/gamma"], grads[f"{stack}/bn1/beta"] = dgamma, dbeta
    _, dw, db = conv2d_backward(dh, caches[f"{stack}/conv1"])
    grads[f"{stack}/conv1/w"], grads[f"{stack}/conv1/b"] = dw, db
