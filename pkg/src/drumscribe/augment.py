"""Pairwise mixup and chunk-shuffling augmentation for audio+label examples.

Two examples are mixed by tiling the shorter one out to the longer one's
length (audio looped, events re-emitted at each repetition), averaging the
audio, and taking the union of the event lists. Mixed examples longer than
12 s are cut into 12 s segments; segments are chopped into exact 1-second
chunks, and training examples are spliced from 12 random chunks. Splices are
raw concatenations: boundary clicks are expected and deliberate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import CANONICAL_RATE, AudioClip, load_wav_file, write_wav_file
from .events import DrumEvent, DrumTrack
from .smf import parse_midi, write_midi
from .vocab import HitVocabulary

CHUNK_SECONDS = 1.0
SEGMENT_SECONDS = 12.0
SPLICE_CHUNKS = 12


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class MixupExample:
    """Mixed audio plus the merged event list and reproduction provenance."""

    audio: AudioClip
    track: DrumTrack
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if abs(self.audio.duration - self.track.duration) > 1.0 / self.audio.sample_rate + 1e-9:
            raise AugmentError("audio and track durations must agree")


@dataclass(frozen=True)
class Chunk:
    """Exactly one second of a mixed example, with chunk-local event times."""

    audio: np.ndarray
    events: tuple[DrumEvent, ...]
    source_id: str

    def __post_init__(self) -> None:
        if len(self.audio) != int(CHUNK_SECONDS * CANONICAL_RATE):
            raise AugmentError(f"chunk must hold exactly 1 s of audio, got {len(self.audio)} samples")
        for e in self.events:
            if not 0.0 <= e.time < CHUNK_SECONDS:
                raise AugmentError(f"chunk-local event time {e.time} outside [0, 1)")


@dataclass
class ChunkPool:
    chunks: list[Chunk]
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.chunks)


def _tile_events(track: DrumTrack, source_len: int, target_len: int, rate: int) -> list[DrumEvent]:
    """Repeat events every source_len samples, keeping those inside the target."""
    out = []
    repeats = -(-target_len // source_len)  # ceil
    limit = target_len / rate
    for rep in range(repeats):
        offset = rep * source_len / rate
        for e in track.events:
            t = e.time + offset
            if t < limit:
                out.append(DrumEvent(t, e.hit, e.velocity))
    return out


def mixup_pair(
    a_audio: AudioClip,
    a_track: DrumTrack,
    b_audio: AudioClip,
    b_track: DrumTrack,
    provenance: dict | None = None,
) -> MixupExample:
    """Mix two examples: tile the shorter, average audio, union events."""
    if a_audio.sample_rate != CANONICAL_RATE or b_audio.sample_rate != CANONICAL_RATE:
        raise AugmentError("mixup inputs must be at 44.1 kHz")
    if len(a_audio) == 0 or len(b_audio) == 0:
        raise AugmentError("cannot mix zero-length audio")
    rate = CANONICAL_RATE
    if len(a_audio) <= len(b_audio):
        short_audio, short_track, long_audio, long_track = a_audio, a_track, b_audio, b_track
    else:
        short_audio, short_track, long_audio, long_track = b_audio, b_track, a_audio, a_track
    n = len(long_audio)
    repeats = -(-n // len(short_audio))
    tiled = np.tile(short_audio.samples, repeats)[:n]
    mixed = 0.5 * tiled + 0.5 * long_audio.samples
    events = _tile_events(short_track, len(short_audio), n, rate)
    limit = n / rate
    events.extend(e for e in long_track.events if e.time < limit)
    duration = n / rate
    return MixupExample(
        audio=AudioClip(mixed, rate),
        track=DrumTrack(tuple(events), duration),
        provenance=provenance or {},
    )


def _segment(example: MixupExample) -> list[MixupExample]:
    """Cut an example into 12 s segments, dropping the remainder; shorter
    examples pass through whole."""
    rate = example.audio.sample_rate
    seg_len = int(SEGMENT_SECONDS * rate)
    n = len(example.audio)
    if n <= seg_len:
        return [example]
    out = []
    for i in range(n // seg_len):
        start, stop = i * seg_len, (i + 1) * seg_len
        t0, t1 = start / rate, stop / rate
        events = tuple(
            DrumEvent(e.time - t0, e.hit, e.velocity)
            for e in example.track.events
            if t0 <= e.time < t1
        )
        out.append(
            MixupExample(
                audio=AudioClip(example.audio.samples[start:stop], rate),
                track=DrumTrack(events, SEGMENT_SECONDS),
                provenance={**example.provenance, "segment": i},
            )
        )
    return out


def _chop(example: MixupExample, source_id: str) -> list[Chunk]:
    """Chop one example into exact 1 s chunks; the final partial chunk is dropped.

    Events exactly on a chunk boundary belong to the later chunk (half-open
    chunk intervals).
    """
    rate = example.audio.sample_rate
    chunk_len = int(CHUNK_SECONDS * rate)
    n_chunks = len(example.audio) // chunk_len
    chunks = []
    for i in range(n_chunks):
        start = i * chunk_len
        t0 = start / rate
        events = tuple(
            DrumEvent(e.time - t0, e.hit, e.velocity)
            for e in example.track.events
            if t0 <= e.time < t0 + CHUNK_SECONDS
        )
        chunks.append(
            Chunk(
                audio=example.audio.samples[start : start + chunk_len].copy(),
                events=events,
                source_id=f"{source_id}/c{i}",
            )
        )
    return chunks


def mixup_examples(
    sources: list[tuple[AudioClip, DrumTrack, str]],
    n_mixup: int,
    rng: np.random.Generator,
) -> list[MixupExample]:
    """Draw random source pairs and mix them; segments longer than 12 s are split."""
    if not sources:
        raise AugmentError("need at least one source example")
    out = []
    for m in range(n_mixup):
        i = int(rng.integers(len(sources)))
        j = int(rng.integers(len(sources)))
        if len(sources) > 1:
            while j == i:
                j = int(rng.integers(len(sources)))
        a_audio, a_track, a_id = sources[i]
        b_audio, b_track, b_id = sources[j]
        mixed = mixup_pair(
            a_audio, a_track, b_audio, b_track,
            provenance={"mix_index": m, "sources": [a_id, b_id]},
        )
        out.extend(_segment(mixed))
    return out


def build_chunk_pool(
    sources: list[tuple[AudioClip, DrumTrack, str]],
    n_mixup: int,
    seed: int,
) -> ChunkPool:
    """Mix ``n_mixup`` random pairs and chop everything into 1 s chunks."""
    rng = np.random.default_rng(seed)
    chunks: list[Chunk] = []
    for example in mixup_examples(sources, n_mixup, rng):
        src = "+".join(example.provenance.get("sources", ())) or "anon"
        seg = example.provenance.get("segment", 0)
        mix = example.provenance.get("mix_index", 0)
        chunks.extend(_chop(example, f"m{mix}s{seg}({src})"))
    return ChunkPool(chunks=chunks, seed=seed)


def shuffled_mixup_example(pool: ChunkPool, rng: np.random.Generator) -> MixupExample:
    """Splice 12 chunks drawn with replacement into one 12 s example."""
    if len(pool) == 0:
        raise AugmentError("chunk pool is empty")
    rate = CANONICAL_RATE
    chunk_len = int(CHUNK_SECONDS * rate)
    picks = [int(rng.integers(len(pool))) for _ in range(SPLICE_CHUNKS)]
    audio = np.empty(SPLICE_CHUNKS * chunk_len, dtype=np.float64)
    events: list[DrumEvent] = []
    for slot, index in enumerate(picks):
        chunk = pool.chunks[index]
        audio[slot * chunk_len : (slot + 1) * chunk_len] = chunk.audio
        events.extend(DrumEvent(e.time + slot * CHUNK_SECONDS, e.hit, e.velocity) for e in chunk.events)
    return MixupExample(
        audio=AudioClip(audio, rate),
        track=DrumTrack(tuple(events), SPLICE_CHUNKS * CHUNK_SECONDS),
        provenance={"chunks": picks, "pool_seed": pool.seed},
    )


def save_chunk_pool(pool: ChunkPool, out_dir: str | Path, vocab: HitVocabulary) -> None:
    """Persist a pool as (wav, mid, meta) triples plus an index file."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    pitch_of = {hit: pitch for pitch, hit in vocab.pitch_map.items()}
    index = {"version": 1, "seed": pool.seed, "chunks": []}
    for i, chunk in enumerate(pool.chunks):
        stem = f"chunk{i:06d}"
        write_wav_file(root / f"{stem}.wav", AudioClip(chunk.audio, CANONICAL_RATE))
        track = DrumTrack(chunk.events, CHUNK_SECONDS)
        (root / f"{stem}.mid").write_bytes(write_midi(track, pitch_of=pitch_of))
        (root / f"{stem}.json").write_text(json.dumps({"source_id": chunk.source_id}))
        index["chunks"].append(stem)
    (root / "index.json").write_text(json.dumps(index, indent=1))


def load_chunk_pool(in_dir: str | Path, vocab: HitVocabulary) -> ChunkPool:
    root = Path(in_dir)
    index = json.loads((root / "index.json").read_text())
    chunks = []
    for stem in index["chunks"]:
        clip = load_wav_file(root / f"{stem}.wav")
        result = parse_midi((root / f"{stem}.mid").read_bytes(), vocab)
        meta = json.loads((root / f"{stem}.json").read_text())
        # MIDI tick quantization can push an event at 0.9995+ s onto exactly
        # 1.0; clamp back inside the chunk's half-open interval.
        events = tuple(
            DrumEvent(min(e.time, CHUNK_SECONDS - 1e-9), e.hit, e.velocity)
            for e in result.track.events
        )
        chunks.append(Chunk(audio=clip.samples, events=events, source_id=meta["source_id"]))
    return ChunkPool(chunks=chunks, seed=index.get("seed"))
