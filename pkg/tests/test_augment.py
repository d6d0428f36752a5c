import numpy as np
import pytest

from drumscribe.audio import CANONICAL_RATE, AudioClip
from drumscribe.augment import (
    AugmentError,
    Chunk,
    ChunkPool,
    build_chunk_pool,
    load_chunk_pool,
    mixup_examples,
    mixup_pair,
    save_chunk_pool,
    shuffled_mixup_example,
)
from drumscribe.events import DrumEvent, DrumTrack
from drumscribe.spectrogram import log_mel
from drumscribe.toykit import random_track, toy_synthesize
from drumscribe.vocab import Level, load_vocab

RATE = CANONICAL_RATE


def silent(seconds: float) -> AudioClip:
    return AudioClip(np.zeros(int(seconds * RATE)), RATE)


def example(seconds: float, seed: int, events_per_second=2.0):
    rng = np.random.default_rng(seed)
    track = random_track(rng, seconds, events_per_second)
    return toy_synthesize(track, kit_seed=seed), track


class TestMixupPair:
    def test_short_example_tiles_to_long(self):
        a_track = DrumTrack((DrumEvent(1.0, 0, 100),), duration=4.0)
        b_track = DrumTrack((DrumEvent(9.5, 1, 80),), duration=10.0)
        mixed = mixup_pair(silent(4.0), a_track, silent(10.0), b_track)
        assert mixed.audio.duration == pytest.approx(10.0)
        times = [(e.time, e.hit) for e in mixed.track.events]
        assert times == [(1.0, 0), (5.0, 0), (9.0, 0), (9.5, 1)]

    def test_tiled_events_beyond_long_end_dropped(self):
        a_track = DrumTrack((DrumEvent(3.0, 0, 100),), duration=4.0)
        b_track = DrumTrack((), duration=10.0)
        mixed = mixup_pair(silent(4.0), a_track, silent(10.0), b_track)
        # Repetitions at 3, 7, 11 -> the 11 s copy falls outside the 10 s mix.
        assert [e.time for e in mixed.track.events] == [3.0, 7.0]

    def test_self_mix_averages_to_identity(self):
        audio, track = example(3.0, seed=1)
        mixed = mixup_pair(audio, track, audio, track)
        assert np.allclose(mixed.audio.samples, audio.samples, atol=1e-12)
        # Events are unioned, so every hit appears twice before label collapsing.
        assert len(mixed.track) == 2 * len(track)

    def test_zero_length_rejected(self):
        with pytest.raises(AugmentError):
            mixup_pair(AudioClip(np.zeros(0), RATE), DrumTrack(()), silent(1.0), DrumTrack((), 1.0))

    def test_event_count_formula_over_random_pairs(self):
        # Oracle: brute-force recount of tiled-and-truncated events.
        rng = np.random.default_rng(55)
        for _ in range(200):
            la = float(rng.uniform(0.5, 6.0))
            lb = float(rng.uniform(0.5, 6.0))
            a_audio, a_track = silent(la), random_track(rng, la)
            b_audio, b_track = silent(lb), random_track(rng, lb)
            mixed = mixup_pair(a_audio, a_track, b_audio, b_track)
            if len(a_audio) <= len(b_audio):
                short_audio, short_track, long_audio, long_track = a_audio, a_track, b_audio, b_track
            else:
                short_audio, short_track, long_audio, long_track = b_audio, b_track, a_audio, a_track
            limit = len(long_audio) / RATE
            expected = sum(1 for e in long_track.events if e.time < limit)
            rep = 0
            while rep * len(short_audio) < len(long_audio):
                base = rep * len(short_audio) / RATE
                expected += sum(1 for e in short_track.events if base + e.time < limit)
                rep += 1
            assert len(mixed.track) == expected


class TestChunkPool:
    def test_10s_example_gives_10_chunks(self):
        sources = [(silent(10.0), DrumTrack((), 10.0), "a"), (silent(10.0), DrumTrack((), 10.0), "b")]
        pool = build_chunk_pool(sources, n_mixup=1, seed=0)
        assert len(pool) == 10

    def test_25s_example_segments_to_24_chunks(self):
        # 25 s mixes split into two 12 s segments (1 s remainder dropped),
        # then 24 one-second chunks.
        sources = [(silent(25.0), DrumTrack((), 25.0), "a"), (silent(25.0), DrumTrack((), 25.0), "b")]
        pool = build_chunk_pool(sources, n_mixup=1, seed=0)
        assert len(pool) == 24

    def test_pool_regeneration_is_deterministic(self):
        rng_sources = [example(4.0, seed=s) for s in range(3)]
        sources = [(a, t, f"src{i}") for i, (a, t) in enumerate(rng_sources)]
        p1 = build_chunk_pool(sources, n_mixup=4, seed=99)
        p2 = build_chunk_pool(sources, n_mixup=4, seed=99)
        assert [c.source_id for c in p1.chunks] == [c.source_id for c in p2.chunks]
        for c1, c2 in zip(p1.chunks, p2.chunks):
            assert np.array_equal(c1.audio, c2.audio)
            assert c1.events == c2.events

    def test_chunk_events_are_local_and_half_open(self):
        track = DrumTrack((DrumEvent(1.0, 0, 100), DrumEvent(1.999, 1, 90)), duration=4.0)
        sources = [(silent(4.0), track, "a"), (silent(4.0), track, "b")]
        pool = build_chunk_pool(sources, n_mixup=1, seed=1)
        # Boundary event at exactly 1.0 belongs to chunk 1 (time 0.0 there).
        chunk1 = pool.chunks[1]
        assert any(e.time == 0.0 and e.hit == 0 for e in chunk1.events)
        assert all(0.0 <= e.time < 1.0 for c in pool.chunks for e in c.events)


class TestShuffledMixup:
    def make_pool(self, n=3, with_events=True):
        chunks = []
        for s in range(n):
            rng = np.random.default_rng(s)
            track = random_track(rng, 1.0, events_per_second=3.0) if with_events else DrumTrack((), 1.0)
            events = tuple(e for e in track.events if e.time < 1.0)
            audio = toy_synthesize(DrumTrack(events, 1.0), kit_seed=s)
            chunks.append(
                Chunk(
                    audio=audio.samples, events=events, source_id=f"s{s}"
                )
            )
        return ChunkPool(chunks=chunks, seed=0)

    def test_output_is_12s_1200_frames(self):
        pool = self.make_pool()
        out = shuffled_mixup_example(pool, np.random.default_rng(0))
        assert out.audio.duration == pytest.approx(12.0)
        spec = log_mel(out.audio)
        assert spec.data.shape == (1200, 250)

    def test_single_silent_chunk_pool(self):
        pool = ChunkPool(
            chunks=[
                Chunk(
                    audio=np.zeros(RATE), events=(), source_id="quiet"
                )
            ]
        )
        out = shuffled_mixup_example(pool, np.random.default_rng(0))
        assert np.all(out.audio.samples == 0.0)
        assert out.track.events == ()

    def test_empty_pool_rejected(self):
        with pytest.raises(AugmentError):
            shuffled_mixup_example(ChunkPool(chunks=[]), np.random.default_rng(0))

    def test_concatenation_oracle_1000_draws(self):
        # Oracle: rebuild each splice directly from the drawn chunks and
        # compare audio and offset events exactly.
        pool = self.make_pool(n=3)
        for draw in range(1000):
            rng = np.random.default_rng(10_000 + draw)
            out = shuffled_mixup_example(pool, rng)
            picks = out.provenance["chunks"]
            assert len(picks) == 12
            expected_audio = np.concatenate([pool.chunks[i].audio for i in picks])
            assert np.array_equal(out.audio.samples, expected_audio)
            expected_events = sorted(
                (slot * 1.0 + e.time, e.hit, e.velocity)
                for slot, i in enumerate(picks)
                for e in pool.chunks[i].events
            )
            got = [(e.time, e.hit, e.velocity) for e in out.track.events]
            assert got == expected_events

    def test_event_conservation_and_bounds(self):
        pool = self.make_pool(n=5)
        rng = np.random.default_rng(77)
        out = shuffled_mixup_example(pool, rng)
        picks = out.provenance["chunks"]
        assert len(out.track) == sum(len(pool.chunks[i].events) for i in picks)
        assert all(0.0 <= e.time < 12.0 for e in out.track.events)

    def test_determinism_same_seed(self):
        pool = self.make_pool(n=4)
        a = shuffled_mixup_example(pool, np.random.default_rng(5))
        b = shuffled_mixup_example(pool, np.random.default_rng(5))
        assert a.provenance["chunks"] == b.provenance["chunks"]
        assert np.array_equal(a.audio.samples, b.audio.samples)

    def test_no_crossfade_at_boundaries(self):
        # Raw splice: the sample just before a boundary comes from one chunk,
        # the next sample from the other, with no smoothing in between.
        chunk_a = np.full(RATE, 0.5)
        chunk_b = np.full(RATE, -0.5)
        pool = ChunkPool(chunks=[Chunk(chunk_a, (), "a"), Chunk(chunk_b, (), "b")])
        rng = np.random.default_rng(1)
        out = shuffled_mixup_example(pool, rng)
        boundary_values = {out.audio.samples[RATE - 1], out.audio.samples[RATE]}
        assert boundary_values <= {0.5, -0.5}


class TestPoolPersistence:
    def test_save_load_round_trip(self, tmp_path):
        vocab = load_vocab(level=Level.GROUP7)
        sources = []
        for s in range(2):
            audio, track = example(3.0, seed=s)
            sources.append((audio, track, f"src{s}"))
        pool = build_chunk_pool(sources, n_mixup=2, seed=11)
        save_chunk_pool(pool, tmp_path / "pool", vocab)
        again = load_chunk_pool(tmp_path / "pool", vocab)
        assert len(again) == len(pool)
        for c1, c2 in zip(pool.chunks, again.chunks):
            assert c1.source_id == c2.source_id
            assert len(c1.events) == len(c2.events)
            # 16-bit wav round trip bounds the audio error.
            assert np.max(np.abs(c1.audio - c2.audio)) < 1.5 / 32768
