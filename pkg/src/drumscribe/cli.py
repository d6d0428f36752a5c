"""Command line entry point.

Subcommands: manifest, labels, augment, train, transcribe, eval, ablation,
study-build, serve, stats. Settings come from an optional JSON config file
(--config); explicit flags win over config values. Every run prints its
resolved configuration and seed. Exit codes: 0 success, 1 user error,
2 internal error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


class UserError(Exception):
    pass


def _resolved(args: argparse.Namespace, keys: list[str]) -> dict:
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def _log_config(name: str, config: dict) -> None:
    print(f"[{name}] resolved config: {json.dumps(config, default=str, sort_keys=True)}", file=sys.stderr)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UserError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UserError(f"bad config file {p}: {exc}") from exc


def _apply_config(args: argparse.Namespace, parser_defaults: dict, config: dict) -> None:
    """Config overrides defaults; explicit flags override config."""
    for key, value in config.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and getattr(args, attr) == parser_defaults.get(attr):
            setattr(args, attr, value)


# ---------------------------------------------------------------------------


def cmd_manifest(args) -> int:
    from .manifest import check_split_leakage, generate_egmd_manifest, load_manifest
    from .toykit import make_toy_corpus
    from .vocab import Level, load_vocab

    if args.make_toy:
        corpus = make_toy_corpus(
            args.out_dir or "toy-corpus",
            n_sequences=args.sequences,
            n_kits=args.kits,
            seq_duration=args.duration,
            seed=args.seed,
            holdout_kit=args.holdout_kit,
        )
        print(f"wrote {corpus.n_rows} rows to {corpus.manifest_path}")
        return 0
    if args.egmd_root:
        n = generate_egmd_manifest(args.egmd_root, args.out or "manifest.csv")
        print(f"wrote {n} rows to {args.out or 'manifest.csv'}")
    if not args.manifest:
        if not args.egmd_root:
            raise UserError("need --manifest, --egmd-root, or --make-toy")
        args.manifest = args.out or "manifest.csv"
    vocab = load_vocab(args.vocab, level=Level.GROUP7)
    result = load_manifest(args.manifest, vocab, parse_tracks=True)
    stats = result.stats
    print(f"{len(result.pairs)} pairs, {len(result.row_errors)} row errors")
    for split in ("train", "test", "validation"):
        print(
            f"  {split:>10}: {stats.per_split_pairs.get(split, 0):6d} pairs, "
            f"{stats.per_split_unique.get(split, 0):5d} unique seqs, "
            f"{stats.per_split_duration.get(split, 0.0) / 3600:8.3f} h"
        )
    print(f"  total duration: {stats.total_duration / 3600:.3f} h")
    for err in result.row_errors:
        print(f"  row error: {err}", file=sys.stderr)
    leaks = check_split_leakage(result.pairs)
    if leaks:
        print(f"  split leakage: {len(leaks)} sequence ids appear in multiple splits", file=sys.stderr)
    return 0


def cmd_labels(args) -> int:
    import numpy as np

    from .labels import make_labels
    from .manifest import load_manifest
    from .spectrogram import n_frames_for_samples
    from .audio import load_wav_file
    from .vocab import Level, load_vocab

    vocab = load_vocab(args.vocab, level=Level.GROUP7)
    result = load_manifest(args.manifest, vocab, parse_tracks=True)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    total_onsets = 0
    for pair in result.pairs:
        clip = load_wav_file(pair.audio_path)
        from .vocab import map_hits

        track = map_hits(pair.track, vocab, Level.GROUP7)
        roll = make_labels(track, n_frames_for_samples(len(clip)), vocab)
        name = Path(pair.audio_path).stem + ".npz"
        np.savez(out_dir / name, onsets=roll.onsets, velocities=roll.velocities)
        total_onsets += int(roll.onsets.sum())
    print(f"wrote {len(result.pairs)} label rolls ({total_onsets} onset cells) to {out_dir}")
    return 0


def cmd_augment(args) -> int:
    from .augment import build_chunk_pool, save_chunk_pool
    from .manifest import load_manifest
    from .pipeline import load_sources
    from .vocab import Level, load_vocab

    vocab = load_vocab(args.vocab, level=Level.GROUP7)
    result = load_manifest(args.manifest, vocab, parse_tracks=True)
    sources = load_sources(result.pairs, vocab, split=args.split)
    if not sources:
        raise UserError(f"no '{args.split}' rows in {args.manifest}")
    pool = build_chunk_pool(sources, n_mixup=args.n_mixup, seed=args.seed)
    save_chunk_pool(pool, args.out_dir, vocab)
    print(f"chunk pool: {len(pool)} one-second chunks from {args.n_mixup} mixes -> {args.out_dir}")
    return 0


def cmd_train(args) -> int:
    from .manifest import load_manifest
    from .nn.train import TrainConfig, train
    from .pipeline import (
        eval_items_from_sources,
        evaluate_onset_f,
        load_sources,
        make_batch_fn,
    )
    from .vocab import Level, load_vocab

    vocab = load_vocab(args.vocab, level=Level.GROUP7)
    result = load_manifest(args.manifest, vocab, parse_tracks=True)
    sources = load_sources(result.pairs, vocab, split="train")
    if not sources:
        raise UserError("manifest has no train rows")
    config = TrainConfig(
        batch_size=args.batch_size,
        segment_seconds=args.segment_seconds,
        learning_rate=args.learning_rate,
        max_steps=args.steps,
        seed=args.seed,
        eval_every=args.eval_every,
        checkpoint_every=args.checkpoint_every,
    )
    batch_fn = make_batch_fn(args.arm, sources, config, vocab, n_mixup=args.n_mixup)
    eval_sources = load_sources(result.pairs, vocab, split="test")
    eval_fn = None
    if eval_sources:
        eval_items = eval_items_from_sources(eval_sources)
        eval_fn = lambda p, s: evaluate_onset_f(config.network, p, s, eval_items)
    out = train(
        config,
        batch_fn,
        eval_fn=eval_fn,
        log_path=args.log,
        checkpoint_path=args.out,
        resume_from=args.resume_from,
    )
    final = out.history[-1] if out.history else {}
    print(f"trained {len(out.history)} steps; final row: {final}")
    return 0


def cmd_transcribe(args) -> int:
    from .decode import DecodeConfig, transcribe_file

    config = DecodeConfig(threshold=args.threshold, fixed_velocity=args.fixed_velocity)
    track, smf_bytes = transcribe_file(args.input, args.checkpoint, config)
    Path(args.out).write_bytes(smf_bytes)
    print(f"{len(track)} events -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import f_measure, format_report, velocity_f_measure
    from .smf import parse_midi
    from .vocab import GROUP7_NAMES, Level, load_vocab

    vocab = load_vocab(args.vocab, level=Level.GROUP7)
    ref_dir, est_dir = Path(args.ref), Path(args.est)
    ref_files = sorted(p for p in ref_dir.glob("*.mid")) + sorted(ref_dir.glob("*.midi"))
    if not ref_files:
        raise UserError(f"no .mid files under {ref_dir}")
    tp = fp = fn = 0
    per_class_totals: dict[int, list[int]] = {}
    for ref_path in ref_files:
        est_path = est_dir / ref_path.name
        if not est_path.is_file():
            print(f"missing estimate for {ref_path.name}", file=sys.stderr)
            continue
        ref = parse_midi(ref_path.read_bytes(), vocab).track
        est = parse_midi(est_path.read_bytes(), vocab).track
        fn_metric = velocity_f_measure if args.velocity else f_measure
        result = fn_metric(ref, est, tol=args.tolerance)
        for cls, counts in result.per_class.items():
            agg = per_class_totals.setdefault(cls, [0, 0, 0])
            agg[0] += counts.tp
            agg[1] += counts.fp
            agg[2] += counts.fn
        overall = result.overall
        tp, fp, fn = tp + overall.tp, fp + overall.fp, fn + overall.fn
    print(f"{'class':>10} {'TP':>7} {'FP':>7} {'FN':>7} {'P':>7} {'R':>7} {'F':>7}")
    for cls in sorted(per_class_totals):
        c_tp, c_fp, c_fn = per_class_totals[cls]
        p = c_tp / (c_tp + c_fp) if c_tp + c_fp else 0.0
        r = c_tp / (c_tp + c_fn) if c_tp + c_fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        name = GROUP7_NAMES[cls] if cls < len(GROUP7_NAMES) else str(cls)
        print(f"{name:>10} {c_tp:>7} {c_fp:>7} {c_fn:>7} {p:>7.4f} {r:>7.4f} {f:>7.4f}")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f_overall = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    print(f"{'overall':>10} {tp:>7} {fp:>7} {fn:>7} {precision:>7.4f} {recall:>7.4f} {f_overall:>7.4f}")
    return 0


def cmd_ablation(args) -> int:
    from .ablation import run_ablation

    table = run_ablation(
        corpus_dir=args.corpus,
        steps=args.steps,
        batch_size=args.batch_size,
        seed=args.seed,
        n_mixup=args.n_mixup,
        learning_rate=args.learning_rate,
        generate=args.generate,
    )
    print(f"{'arm':>16} {'eval F':>8}")
    for arm, f in table.items():
        print(f"{arm:>16} {f:>8.4f}")
    return 0


def cmd_study_build(args) -> int:
    from .study import build_study

    config = _load_config_file(args.study_config)
    if not config:
        raise UserError("study-build needs --study-config with clips and arms")
    base = Path(args.study_config).parent
    clips = {c["id"]: base / c["original"] for c in config["clips"]}
    arms = {}
    for arm_id, mapping in config["arms"].items():
        arms[arm_id] = {clip_id: base / rel for clip_id, rel in mapping.items()}
    study = build_study(clips, arms, args.out_dir, seed=args.seed)
    print(f"{len(study.questions)} questions -> {args.out_dir}")
    for skipped in study.skipped_clips:
        print(f"skipped {skipped}", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    from .service import ListenService, serve_forever
    from .store import RatingStore
    from .study import load_study

    study_dir = Path(args.study)
    study = load_study(study_dir / "study.json")
    store = RatingStore(args.store or study_dir / "ratings.jsonl")
    service = ListenService(
        study,
        store,
        audio_root=study_dir / "audio",
        raters_per_question=args.raters_per_question,
        seed=args.seed,
        static_root=args.static,
    )
    serve_forever(service, args.host, args.port)
    return 0


def cmd_stats(args) -> int:
    from .stats import bonferroni, count_wins, kruskal_wallis, wilcoxon_signed_rank
    from .store import load_ratings

    ratings = load_ratings(args.ratings)
    if not ratings:
        print("no ratings")
        return 0
    totals, per_pair = count_wins(ratings)
    print(f"{len(ratings)} ratings")
    print("wins per model:")
    for model, wins in totals.most_common():
        print(f"  {model:>24}: {wins}")
    print("pairwise:")
    for (m1, m2), counts in sorted(per_pair.items()):
        print(f"  {m1} vs {m2}: {counts.get(m1, 0)} - {counts.get(m2, 0)}")
    by_winner: dict[str, list[int]] = {}
    for r in ratings:
        by_winner.setdefault(r.winning_model, []).append(r.likert)
    if len(by_winner) >= 2:
        kw = kruskal_wallis(list(by_winner.values()))
        print(f"Kruskal-Wallis over likert-by-winning-model: H = {kw.h:.4f}, df = {kw.df}, p = {kw.p:.6g}")
    tests = []
    for (m1, m2), _ in sorted(per_pair.items()):
        signed = [r.likert if r.winning_model == m1 else -r.likert
                  for r in ratings if {r.model_a, r.model_b} == {m1, m2}]
        result = wilcoxon_signed_rank(signed)
        tests.append(((m1, m2), result))
    if tests:
        decisions = bonferroni([t[1].p for t in tests], m=len(tests))
        print(f"Wilcoxon signed-rank per pair (Bonferroni m = {len(tests)}, alpha 0.001):")
        for ((m1, m2), result), decision in zip(tests, decisions):
            flag = "significant" if decision.significant else "not significant"
            print(f"  {m1} vs {m2}: W = {result.w:.1f}, p = {result.p:.6g} ({result.method}), {flag}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drumscribe", description=__doc__)
    parser.add_argument("--config", help="JSON config file; flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("manifest", help="generate/validate corpus manifests")
    p.add_argument("--manifest")
    p.add_argument("--egmd-root")
    p.add_argument("--out")
    p.add_argument("--vocab")
    p.add_argument("--make-toy", action="store_true", help="generate a toy corpus")
    p.add_argument("--out-dir")
    p.add_argument("--sequences", type=int, default=8)
    p.add_argument("--kits", type=int, default=2)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--holdout-kit", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_manifest)

    p = sub.add_parser("labels", help="materialize training label rolls")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--vocab")
    p.set_defaults(fn=cmd_labels)

    p = sub.add_parser("augment", help="build and persist a mixup chunk pool")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-mixup", type=int, default=32)
    p.add_argument("--split", default="train")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab")
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("train", help="train the onset+velocity model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--arm", default="unmodified", choices=("unmodified", "mixup", "shuffled-mixup"))
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--segment-seconds", type=float, default=12.0)
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--n-mixup", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--log")
    p.add_argument("--resume-from")
    p.add_argument("--vocab")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("transcribe", help="audio in, General MIDI drums out")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--fixed-velocity", type=int, default=None)
    p.set_defaults(fn=cmd_transcribe)

    p = sub.add_parser("eval", help="tolerance-window F-measure between MIDI directories")
    p.add_argument("--ref", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("--velocity", action="store_true")
    p.add_argument("--vocab")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablation", help="unmodified vs mixup vs shuffled-mixup")
    p.add_argument("--corpus", required=True, help="toy corpus dir (see manifest --make-toy)")
    p.add_argument("--generate", action="store_true", help="generate the corpus if missing")
    p.add_argument("--steps", type=int, default=150)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--n-mixup", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_ablation)

    p = sub.add_parser("study-build", help="build a pairwise listening study")
    p.add_argument("--study-config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_study_build)

    p = sub.add_parser("serve", help="serve listening-test sessions")
    p.add_argument("--study", required=True)
    p.add_argument("--store")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--raters-per-question", type=int, default=1)
    p.add_argument("--static", help="serve this directory as the web frontend")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("stats", help="win counts and rank tests over a rating store")
    p.add_argument("--ratings", required=True)
    p.set_defaults(fn=cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config_file(args.config)
        defaults = {
            action.dest: action.default
            for action in parser._subparsers._group_actions[0].choices[args.command]._actions
        }
        _apply_config(args, defaults, config.get(args.command, config))
        shown = {k: v for k, v in vars(args).items() if k not in ("fn", "config") and v is not None}
        _log_config(args.command, shown)
        return args.fn(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
