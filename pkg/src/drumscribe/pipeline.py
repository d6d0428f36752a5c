"""Glue between the corpus, augmentation, model and evaluation layers.

Builds step-indexed batch providers for the three training regimes compared
in the augmentation ablation:

* ``unmodified``     -- raw training examples, random fixed-length crops;
* ``mixup``          -- precomputed pairwise mixes cut to 12 s segments;
* ``shuffled-mixup`` -- fresh 12-chunk splices drawn from the chunk pool at
                        every step.

All regimes see identical step budgets, batch sizes and segment lengths, so
arm comparisons differ only in the data distribution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio import AudioClip, load_wav_file
from .augment import ChunkPool, build_chunk_pool, mixup_examples, shuffled_mixup_example
from .decode import DecodeConfig, decode
from .events import DrumTrack
from .labels import make_labels
from .manifest import ExamplePair
from .metrics import f_measure
from .nn.network import NetworkConfig, forward
from .nn.train import TrainConfig
from .spectrogram import FRAME_SECONDS, LOG_EPS, log_mel
from .vocab import HitVocabulary, Level, map_hits

SILENCE_CELL = math.log(LOG_EPS)

ARMS = ("unmodified", "mixup", "shuffled-mixup")


@dataclass(frozen=True)
class TrainItem:
    spec: np.ndarray  # (frames, bins) float32
    onsets: np.ndarray  # (frames, classes) float32
    velocities: np.ndarray


def load_sources(pairs: list[ExamplePair], vocab: HitVocabulary, split: str) -> list[tuple[AudioClip, DrumTrack, str]]:
    """Load (audio, GROUP7 track, id) triples for one split."""
    sources = []
    for pair in pairs:
        if pair.split != split:
            continue
        if pair.track is None:
            raise ValueError(f"{pair.midi_path}: manifest must be loaded with parse_tracks=True")
        track = map_hits(pair.track, vocab, Level.GROUP7)
        sources.append((load_wav_file(pair.audio_path), track, f"{pair.seq_id}/{pair.kit_id}"))
    return sources


def example_to_item(audio: AudioClip, track: DrumTrack, vocab: HitVocabulary) -> TrainItem:
    spec = log_mel(audio)
    roll = make_labels(track, spec.n_frames, vocab)
    return TrainItem(spec=spec.data, onsets=roll.onsets, velocities=roll.velocities)


def _crop_or_pad(item: TrainItem, n_frames: int, rng: np.random.Generator) -> TrainItem:
    T = item.spec.shape[0]
    if T == n_frames:
        return item
    if T > n_frames:
        start = int(rng.integers(0, T - n_frames + 1))
        sl = slice(start, start + n_frames)
        return TrainItem(item.spec[sl], item.onsets[sl], item.velocities[sl])
    pad = n_frames - T
    spec = np.concatenate([item.spec, np.full((pad, item.spec.shape[1]), SILENCE_CELL, dtype=item.spec.dtype)])
    onsets = np.concatenate([item.onsets, np.zeros((pad, item.onsets.shape[1]), dtype=item.onsets.dtype)])
    vels = np.concatenate([item.velocities, np.zeros((pad, item.velocities.shape[1]), dtype=item.velocities.dtype)])
    return TrainItem(spec, onsets, vels)


def segment_frames(config: TrainConfig) -> int:
    return int(round(config.segment_seconds / FRAME_SECONDS))


def make_unmodified_batch_fn(items: list[TrainItem], config: TrainConfig):
    if not items:
        raise ValueError("no training items")
    n_frames = segment_frames(config)

    def batch(step: int):
        rng = np.random.default_rng([config.seed, 11, step])
        picks = rng.integers(0, len(items), size=config.batch_size)
        chosen = [_crop_or_pad(items[i], n_frames, rng) for i in picks]
        return (
            np.stack([c.spec for c in chosen]),
            np.stack([c.onsets for c in chosen]),
            np.stack([c.velocities for c in chosen]),
        )

    return batch


def mixup_items(
    sources: list[tuple[AudioClip, DrumTrack, str]],
    n_mixup: int,
    seed: int,
    vocab: HitVocabulary,
) -> list[TrainItem]:
    rng = np.random.default_rng(seed)
    triples = [(a, t, i) for a, t, i in sources]
    out = []
    for example in mixup_examples(triples, n_mixup, rng):
        out.append(example_to_item(example.audio, example.track, vocab))
    return out


def make_shuffled_batch_fn(pool: ChunkPool, config: TrainConfig, vocab: HitVocabulary):
    if len(pool) == 0:
        raise ValueError("empty chunk pool")

    def one_item(rng: np.random.Generator) -> TrainItem:
        example = shuffled_mixup_example(pool, rng)
        return example_to_item(example.audio, example.track, vocab)

    def batch(step: int):
        rng = np.random.default_rng([config.seed, 13, step])
        chosen = [one_item(rng) for _ in range(config.batch_size)]
        return (
            np.stack([c.spec for c in chosen]),
            np.stack([c.onsets for c in chosen]),
            np.stack([c.velocities for c in chosen]),
        )

    return batch


def make_batch_fn(
    arm: str,
    sources: list[tuple[AudioClip, DrumTrack, str]],
    config: TrainConfig,
    vocab: HitVocabulary,
    n_mixup: int | None = None,
):
    """Build the step-indexed batch provider for one ablation arm."""
    if arm not in ARMS:
        raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")
    if arm == "unmodified":
        items = [example_to_item(a, t, vocab) for a, t, _ in sources]
        return make_unmodified_batch_fn(items, config)
    n_mixup = n_mixup or max(2 * len(sources), 8)
    if arm == "mixup":
        # Mixed examples are at most 12 s by construction; per-step crops
        # handle anything longer than the configured segment.
        items = mixup_items(sources, n_mixup, config.seed, vocab)
        return make_unmodified_batch_fn(items, config)
    pool = build_chunk_pool(sources, n_mixup, seed=config.seed)
    return make_shuffled_batch_fn(pool, config, vocab)


def evaluate_onset_f(
    net_cfg: NetworkConfig,
    params: dict,
    state: dict,
    eval_items: list[tuple[np.ndarray, DrumTrack]],
    threshold: float = 0.5,
) -> float:
    """Pooled (micro-average) onset F over (spectrogram, reference) pairs."""
    tp = fp = fn = 0
    for spec_data, reference in eval_items:
        probs, vels, _, _ = forward(net_cfg, params, state, spec_data[None])
        decoded = decode(probs[0], vels[0], DecodeConfig(threshold=threshold))
        result = f_measure(reference, decoded)
        overall = result.overall
        tp += overall.tp
        fp += overall.fp
        fn += overall.fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def eval_items_from_sources(
    sources: list[tuple[AudioClip, DrumTrack, str]],
) -> list[tuple[np.ndarray, DrumTrack]]:
    return [(log_mel(audio).data, track) for audio, track, _ in sources]
