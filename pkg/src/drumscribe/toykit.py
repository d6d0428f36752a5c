"""Deterministic toy drum kit for desk-scale experiments.

Each of the 7 hit classes gets its own spectral home (a sine fundamental for
the kick, band-limited noise bursts elsewhere) so classes stay linearly
separable in mel space. A kit seed jitters band placement by up to +-8%,
which is small enough that bands never overlap across kits: adjacent band
gaps are kept at ratio >= 1.21 > 1.08/0.92.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import CANONICAL_RATE, AudioClip, write_wav_file
from .events import DrumEvent, DrumTrack
from .smf import write_midi
from .vocab import GM_PITCHES, GROUP7_NAMES

PEAK_CEILING = 0.9
BASE_AMPLITUDE = 0.7
KIT_JITTER = 0.08

# Per class: (band low Hz or None for the kick sine, band high Hz, decay s).
_TIMBRES = {
    "KD": (None, 60.0, 0.18),
    "SD": (400.0, 900.0, 0.10),
    "TT": (150.0, 300.0, 0.22),
    "HH": (5600.0, 8200.0, 0.05),
    "CY": (2800.0, 4600.0, 0.55),
    "RD": (1400.0, 2300.0, 0.40),
    "BE": (10000.0, 15000.0, 0.30),
}


def _class_burst(class_name: str, kit_seed: int, sample_rate: int) -> np.ndarray:
    """Unit-peak decaying burst for one class on one kit (deterministic)."""
    class_index = GROUP7_NAMES.index(class_name)
    rng = np.random.default_rng([kit_seed, class_index])
    low, high, decay = _TIMBRES[class_name]
    jitter = 1.0 + rng.uniform(-KIT_JITTER, KIT_JITTER)
    n = int(round(min(4.0 * decay, 2.5) * sample_rate))
    t = np.arange(n) / sample_rate
    envelope = np.exp(-t / decay)
    if low is None:
        tone = np.sin(2.0 * np.pi * high * jitter * t)
    else:
        noise = rng.standard_normal(n)
        spectrum = np.fft.rfft(noise)
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
        mask = (freqs >= low * jitter) & (freqs <= high * jitter)
        spectrum[~mask] = 0.0
        tone = np.fft.irfft(spectrum, n)
    burst = envelope * tone
    peak = np.max(np.abs(burst))
    return burst / peak if peak > 0 else burst


def toy_synthesize(track: DrumTrack, kit_seed: int, sample_rate: int = CANONICAL_RATE) -> AudioClip:
    """Render a 7-class track with the toy kit.

    Per-event amplitude is proportional to velocity/127; the mix is rescaled
    only if its peak exceeds 0.9, so isolated hits keep exact velocity
    scaling.
    """
    n = int(round(track.duration * sample_rate))
    out = np.zeros(max(n, 1), dtype=np.float64)
    bursts = {}
    for event in track.events:
        name = GROUP7_NAMES[event.hit]
        if name not in bursts:
            bursts[name] = _class_burst(name, kit_seed, sample_rate)
        burst = bursts[name]
        start = int(round(event.time * sample_rate))
        stop = min(start + len(burst), len(out))
        if stop <= start:
            continue
        out[start:stop] += BASE_AMPLITUDE * (event.velocity / 127.0) * burst[: stop - start]
    peak = np.max(np.abs(out))
    if peak > PEAK_CEILING:
        out *= PEAK_CEILING / peak
    return AudioClip(out, sample_rate)


def random_track(
    rng: np.random.Generator,
    duration: float,
    events_per_second: float = 3.0,
    min_gap: float = 0.03,
    n_classes: int = 7,
) -> DrumTrack:
    """Random 7-class track with a per-class minimum inter-onset gap."""
    n_events = max(1, int(round(duration * events_per_second)))
    times = np.sort(rng.uniform(0.05, max(duration - 0.25, 0.06), size=n_events))
    classes = rng.integers(0, n_classes, size=n_events)
    velocities = rng.integers(40, 128, size=n_events)
    last_time: dict[int, float] = {}
    events = []
    for t, c, v in zip(times, classes, velocities):
        if c in last_time and t - last_time[c] < min_gap:
            continue
        last_time[int(c)] = float(t)
        events.append(DrumEvent(float(t), int(c), int(v)))
    return DrumTrack(tuple(events), duration)


@dataclass(frozen=True)
class ToyCorpus:
    root: Path
    manifest_path: Path
    n_rows: int


def make_toy_corpus(
    out_dir: str | Path,
    n_sequences: int,
    n_kits: int,
    seq_duration: float,
    seed: int,
    holdout_kit: int | None = None,
    events_per_second: float = 3.0,
) -> ToyCorpus:
    """Write a toy corpus (wav + mid + manifest.csv) under ``out_dir``.

    Every sequence is rendered on every kit, mirroring a multi-kit corpus.
    When ``holdout_kit`` is given, that kit's rows land in the test split and
    the rest in train; otherwise everything is train.
    """
    root = Path(out_dir)
    (root / "audio").mkdir(parents=True, exist_ok=True)
    (root / "midi").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    gm_pitch_of = {i: GM_PITCHES[name] for i, name in enumerate(GROUP7_NAMES)}
    rows = []
    for s in range(n_sequences):
        track = random_track(rng, seq_duration, events_per_second)
        midi_rel = f"midi/seq{s:03d}.mid"
        (root / midi_rel).write_bytes(write_midi(track, pitch_of=gm_pitch_of))
        for k in range(n_kits):
            clip = toy_synthesize(track, kit_seed=seed * 1000 + k)
            audio_rel = f"audio/seq{s:03d}_kit{k}.wav"
            write_wav_file(root / audio_rel, clip)
            split = "test" if holdout_kit is not None and k == holdout_kit else "train"
            rows.append((audio_rel, midi_rel, f"kit{k}", split, f"seq{s:03d}"))
    manifest_path = root / "manifest.csv"
    from .manifest import write_manifest

    write_manifest(manifest_path, rows)
    return ToyCorpus(root=root, manifest_path=manifest_path, n_rows=len(rows))
