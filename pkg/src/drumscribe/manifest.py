"""Manifest-driven corpus bookkeeping.

A corpus is described by a CSV manifest with one row per (audio, midi) pair:

    audio_path,midi_path,kit_id,split[,seq_id[,align_offset]]

Paths are resolved relative to the manifest's directory. ``seq_id`` names the
underlying performance so the same sequence recorded on several kits can be
tracked across splits; it defaults to the midi filename stem. ``align_offset``
is the audio-to-midi alignment offset in seconds (|offset| <= 2 ms).
"""
from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .audio import wav_duration
from .events import DrumTrack
from .smf import parse_midi
from .vocab import HitVocabulary, Level, map_hits

SPLITS = ("train", "test", "validation")
MAX_ALIGN_OFFSET = 0.002


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ExamplePair:
    """One aligned (audio, midi) example with its split assignment."""

    audio_path: Path
    midi_path: Path
    kit_id: str
    split: str
    seq_id: str
    align_offset: float = 0.0
    track: DrumTrack | None = None
    duration: float = 0.0

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r}")
        if abs(self.align_offset) > MAX_ALIGN_OFFSET:
            raise ManifestError(
                f"alignment offset {self.align_offset} exceeds {MAX_ALIGN_OFFSET * 1000:.0f} ms"
            )


@dataclass
class ManifestStats:
    per_split_pairs: Counter = field(default_factory=Counter)
    per_split_unique: dict[str, int] = field(default_factory=dict)
    per_split_duration: dict[str, float] = field(default_factory=dict)
    total_duration: float = 0.0


@dataclass
class ManifestResult:
    pairs: list[ExamplePair]
    stats: ManifestStats
    row_errors: list[str]


def load_manifest(path: str | Path, vocab: HitVocabulary, parse_tracks: bool = True) -> ManifestResult:
    """Load and validate a manifest; rows with missing files are reported, not fatal."""
    path = Path(path)
    root = path.parent
    pairs: list[ExamplePair] = []
    errors: list[str] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if row[0].strip() == "audio_path":  # optional header row
                continue
            if len(row) < 4:
                raise ManifestError(f"{path}:{lineno}: expected at least 4 columns")
            audio = root / row[0].strip()
            midi = root / row[1].strip()
            kit_id = row[2].strip()
            split = row[3].strip()
            if split not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
            seq_id = row[4].strip() if len(row) > 4 and row[4].strip() else midi.stem
            offset = float(row[5]) if len(row) > 5 and row[5].strip() else 0.0
            missing = [str(p) for p in (audio, midi) if not p.is_file()]
            if missing:
                errors.append(f"{path}:{lineno}: missing file(s): {', '.join(missing)}")
                continue
            track = parse_midi(midi.read_bytes(), vocab).track if parse_tracks else None
            pairs.append(
                ExamplePair(
                    audio_path=audio,
                    midi_path=midi,
                    kit_id=kit_id,
                    split=split,
                    seq_id=seq_id,
                    align_offset=offset,
                    track=track,
                    duration=wav_duration(audio),
                )
            )
    return ManifestResult(pairs=pairs, stats=manifest_stats(pairs), row_errors=errors)


def manifest_stats(pairs: list[ExamplePair]) -> ManifestStats:
    stats = ManifestStats()
    unique: dict[str, set[str]] = defaultdict(set)
    duration: dict[str, float] = defaultdict(float)
    for pair in pairs:
        stats.per_split_pairs[pair.split] += 1
        unique[pair.split].add(pair.seq_id)
        duration[pair.split] += pair.duration
    stats.per_split_unique = {s: len(v) for s, v in unique.items()}
    stats.per_split_duration = dict(duration)
    stats.total_duration = sum(duration.values())
    return stats


def check_split_leakage(pairs: list[ExamplePair]) -> dict[str, list[str]]:
    """Sequence ids that appear in more than one split (should be empty)."""
    splits_of: dict[str, set[str]] = defaultdict(set)
    for pair in pairs:
        splits_of[pair.seq_id].add(pair.split)
    return {seq: sorted(splits) for seq, splits in splits_of.items() if len(splits) > 1}


def hit_counts(pairs: list[ExamplePair], vocab: HitVocabulary) -> dict[str, Counter]:
    """Per-split hit tallies after regrouping every track to GROUP7."""
    counts: dict[str, Counter] = {split: Counter() for split in SPLITS}
    g7 = vocab.at_level(Level.GROUP7)
    for pair in pairs:
        if pair.track is None:
            raise ManifestError(f"{pair.midi_path}: track not parsed; reload with parse_tracks=True")
        track = map_hits(pair.track, vocab, Level.GROUP7)
        for event in track.events:
            counts[pair.split][g7.name_of(event.hit)] += 1
    return counts


def write_manifest(path: str | Path, rows: list[tuple[str, str, str, str, str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["audio_path", "midi_path", "kit_id", "split", "seq_id"])
        writer.writerows(rows)


def generate_egmd_manifest(root: str | Path, out_path: str | Path) -> int:
    """Build a manifest from an E-GMD v1.0.0-style directory layout.

    Expects ``<root>/e-gmd-v1.0.0.csv`` (or any single ``*.csv`` at the root)
    with ``audio_filename``, ``midi_filename``, ``split`` and ``kit_name``
    columns; the original GMD sequence id (drummer/session/id) becomes the
    manifest ``seq_id``.
    """
    root = Path(root)
    index = root / "e-gmd-v1.0.0.csv"
    if not index.is_file():
        candidates = sorted(root.glob("*.csv"))
        if len(candidates) != 1:
            raise ManifestError(f"no unambiguous dataset index CSV under {root}")
        index = candidates[0]
    rows: list[tuple[str, str, str, str, str]] = []
    with open(index, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"audio_filename", "midi_filename", "split", "kit_name"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ManifestError(f"{index}: missing columns {sorted(required)}")
        for row in reader:
            seq = "/".join(
                str(row.get(k, "")).strip()
                for k in ("drummer", "session", "id")
                if row.get(k)
            ) or Path(row["midi_filename"]).stem
            split = row["split"].strip().lower()
            rows.append(
                (row["audio_filename"].strip(), row["midi_filename"].strip(), row["kit_name"].strip(), split, seq)
            )
    write_manifest(out_path, rows)
    return len(rows)
