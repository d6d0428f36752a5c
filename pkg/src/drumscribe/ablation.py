"""Augmentation ablation: unmodified vs mixup vs shuffled-mixup.

Runs the three training regimes with one seed and matched budgets on a
multi-kit toy corpus whose test split is a held-out kit, then scores each
arm's onset F on that kit. Desk-scale replica of the augmentation comparison:
the expected outcome is directional (shuffled-mixup generalizes at least as
well as the others), not any particular magnitude.
"""
from __future__ import annotations

from pathlib import Path

from .manifest import load_manifest
from .nn.train import TrainConfig, train
from .pipeline import ARMS, eval_items_from_sources, evaluate_onset_f, load_sources, make_batch_fn
from .toykit import make_toy_corpus
from .vocab import Level, load_vocab

# Corpus layout: every sequence appears on every kit; the last kit is the
# held-out test timbre.
TOY_SEQUENCES = 10
TOY_KITS = 5
TOY_HOLDOUT_KIT = 4
TOY_SEQ_SECONDS = 12.0
TOY_CORPUS_SEED = 20_08


def ensure_toy_corpus(corpus_dir: str | Path, seed: int = TOY_CORPUS_SEED) -> Path:
    corpus_dir = Path(corpus_dir)
    manifest = corpus_dir / "manifest.csv"
    if not manifest.is_file():
        make_toy_corpus(
            corpus_dir,
            n_sequences=TOY_SEQUENCES,
            n_kits=TOY_KITS,
            seq_duration=TOY_SEQ_SECONDS,
            seed=seed,
            holdout_kit=TOY_HOLDOUT_KIT,
        )
    return manifest


def run_ablation(
    corpus_dir: str | Path,
    steps: int = 150,
    batch_size: int = 1,
    seed: int = 0,
    n_mixup: int | None = None,
    learning_rate: float = 1e-3,
    generate: bool = False,
    arms: tuple[str, ...] = ARMS,
) -> dict[str, float]:
    """Train every arm with one seed and a matched budget; return {arm: F}."""
    corpus_dir = Path(corpus_dir)
    manifest = corpus_dir / "manifest.csv"
    if generate:
        manifest = ensure_toy_corpus(corpus_dir)
    if not manifest.is_file():
        raise FileNotFoundError(f"no manifest at {manifest}; pass generate=True for a toy corpus")
    vocab = load_vocab(level=Level.GROUP7)
    result = load_manifest(manifest, vocab, parse_tracks=True)
    train_sources = load_sources(result.pairs, vocab, split="train")
    test_sources = load_sources(result.pairs, vocab, split="test")
    if not train_sources or not test_sources:
        raise ValueError("ablation corpus needs both train and test rows")
    eval_items = eval_items_from_sources(test_sources)

    scores: dict[str, float] = {}
    for arm in arms:
        config = TrainConfig(
            batch_size=batch_size,
            segment_seconds=12.0,
            learning_rate=learning_rate,
            max_steps=steps,
            seed=seed,
        )
        batch_fn = make_batch_fn(arm, train_sources, config, vocab, n_mixup=n_mixup)
        out = train(config, batch_fn)
        scores[arm] = evaluate_onset_f(config.network, out.params, out.state, eval_items)
    return scores
