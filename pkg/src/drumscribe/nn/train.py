"""Training loop: Adam with exponential learning-rate decay, checkpoints,
and an append-only metrics log.

Batches are addressed by step index through a ``batch_fn(step)`` callable, so
a run is a pure function of (config, batch_fn): resuming from a checkpoint
reproduces the exact trajectory, and the dropout stream is re-derived from
(seed, step) rather than carried state.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .network import (
    KEEP_CONV,
    KEEP_DENSE,
    KEEP_LSTM_OUT,
    VELOCITY_LOSS_WEIGHT,
    NetworkConfig,
    init_params,
    loss_and_gradients,
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    segment_seconds: float = 12.0
    learning_rate: float = 1e-4
    decay_factor: float = 0.98
    decay_every: int = 10_000
    velocity_loss_weight: float = VELOCITY_LOSS_WEIGHT
    keep_conv: float = KEEP_CONV
    keep_dense: float = KEEP_DENSE
    keep_lstm_out: float = KEEP_LSTM_OUT
    max_steps: int = 569_400
    seed: int = 0
    n_classes: int = 7
    n_bins: int = 250
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 0
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        positives = (
            self.batch_size, self.segment_seconds, self.learning_rate,
            self.decay_factor, self.decay_every, self.velocity_loss_weight,
            self.keep_conv, self.keep_dense, self.keep_lstm_out,
            self.max_steps, self.n_classes, self.n_bins,
        )
        if any(v <= 0 for v in positives):
            raise ValueError("all TrainConfig quantities must be positive")

    @property
    def network(self) -> NetworkConfig:
        return NetworkConfig(n_classes=self.n_classes, n_bins=self.n_bins)

    @property
    def keep_probs(self) -> tuple[float, float, float]:
        return (self.keep_conv, self.keep_dense, self.keep_lstm_out)

    def config_hash(self) -> str:
        """Hash of the trajectory-defining fields.

        Run-control knobs (max_steps, eval/checkpoint cadence) do not alter
        the parameter trajectory, so resuming with a larger budget is legal.
        """
        fields = asdict(self)
        for run_control in ("max_steps", "eval_every", "checkpoint_every"):
            fields.pop(run_control)
        blob = json.dumps(fields, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def learning_rate_at(config: TrainConfig, step: int) -> float:
    return config.learning_rate * config.decay_factor ** (step // config.decay_every)


def adam_init(params: dict) -> tuple[dict, dict]:
    zeros = lambda: {k: np.zeros_like(v) for k, v in params.items()}
    return zeros(), zeros()


def adam_step(params, grads, m, v, lr, step_index, beta1, beta2, eps) -> None:
    """In-place Adam update; ``step_index`` counts from 0."""
    t = step_index + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for key, g in grads.items():
        m[key] = beta1 * m[key] + (1.0 - beta1) * g
        v[key] = beta2 * v[key] + (1.0 - beta2) * np.square(g)
        params[key] = params[key] - lr * (m[key] / bc1) / (np.sqrt(v[key] / bc2) + eps)


@dataclass
class TrainResult:
    params: dict
    state: dict
    history: list[dict] = field(default_factory=list)


BatchFn = Callable[[int], tuple[np.ndarray, np.ndarray, np.ndarray]]


def stacked_batch_fn(items: list[tuple[np.ndarray, np.ndarray, np.ndarray]], config: TrainConfig) -> BatchFn:
    """Batch provider over a fixed example list: step-seeded draws with replacement."""
    if not items:
        raise ValueError("empty training set")

    def batch(step: int):
        rng = np.random.default_rng([config.seed, 104729, step])
        picks = rng.integers(0, len(items), size=config.batch_size)
        spec = np.stack([items[i][0] for i in picks])
        onsets = np.stack([items[i][1] for i in picks])
        vels = np.stack([items[i][2] for i in picks])
        return spec, onsets, vels

    return batch


class MetricsLog:
    FIELDS = ("step", "lr", "loss", "onset_bce", "velocity_mse", "eval_f")

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        if self.path and not self.path.exists():
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(self.FIELDS)

    def append(self, row: dict) -> None:
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([row.get(k, "") for k in self.FIELDS])


def save_checkpoint(path: str | Path, config: TrainConfig, params, state, m, v, step: int) -> None:
    arrays = {"_step": np.asarray(step, dtype=np.int64)}
    for prefix, bag in (("p", params), ("s", state), ("m", m), ("v", v)):
        for key, value in bag.items():
            arrays[f"{prefix}/{key}"] = value
    meta = {"version": CHECKPOINT_VERSION, "config": asdict(config), "config_hash": config.config_hash()}
    arrays["_meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path):
    """Returns (config, params, state, m, v, step)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["_meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        config = TrainConfig(**meta["config"])
        step = int(data["_step"])
        bags = {"p": {}, "s": {}, "m": {}, "v": {}}
        for key in data.files:
            if key.startswith("_"):
                continue
            prefix, name = key.split("/", 1)
            bags[prefix][name] = data[key]
    return config, bags["p"], bags["s"], bags["m"], bags["v"], step


def train(
    config: TrainConfig,
    batch_fn: BatchFn,
    eval_fn: Callable[[dict, dict], float] | None = None,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    resume_from: str | Path | None = None,
    stop_fn: Callable[[dict], bool] | None = None,
) -> TrainResult:
    """Run Adam for ``config.max_steps`` steps.

    ``eval_fn`` is called every ``config.eval_every`` steps (and once at the
    end) and its value lands in the metrics log. ``stop_fn`` sees each logged
    row and may end the run early (used by overfit-style sanity runs). A
    non-finite loss aborts with diagnostics.
    """
    if resume_from is not None:
        saved_config, params, state, m, v, start_step = load_checkpoint(resume_from)
        if saved_config.config_hash() != config.config_hash():
            raise ValueError("checkpoint config hash does not match the requested config")
    else:
        params, state = init_params(config.network, seed=config.seed)
        m, v = adam_init(params)
        start_step = 0

    log = MetricsLog(log_path)
    history: list[dict] = []
    for step in range(start_step, config.max_steps):
        spec, onsets, vels = batch_fn(step)
        rng = np.random.default_rng([config.seed, 7919, step])
        lr = learning_rate_at(config, step)
        total, bce, vel_mse, grads, state = loss_and_gradients(
            config.network, params, state, spec, onsets, vels,
            rng=rng, train=True,
            keep_probs=config.keep_probs,
            velocity_weight=config.velocity_loss_weight,
        )
        if not math.isfinite(total):
            raise RuntimeError(
                f"non-finite loss at step {step}: total={total} bce={bce} vel_mse={vel_mse} lr={lr}"
            )
        adam_step(params, grads, m, v, lr, step, config.adam_beta1, config.adam_beta2, config.adam_eps)
        row = {"step": step, "lr": lr, "loss": total, "onset_bce": bce, "velocity_mse": vel_mse}
        if eval_fn is not None and config.eval_every and (step + 1) % config.eval_every == 0:
            row["eval_f"] = eval_fn(params, state)
        log.append(row)
        history.append(row)
        if checkpoint_path and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, config, params, state, m, v, step + 1)
        if stop_fn is not None and stop_fn(row):
            break
    if eval_fn is not None and (not history or "eval_f" not in history[-1]):
        final = {"step": history[-1]["step"] if history else start_step, "eval_f": eval_fn(params, state)}
        log.append(final)
        history.append(final)
    if checkpoint_path:
        final_step = history[-1]["step"] + 1 if history else start_step
        save_checkpoint(checkpoint_path, config, params, state, m, v, final_step)
    return TrainResult(params=params, state=state, history=history)
