"""Decode model outputs into drum events and run the full transcription chain."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import CANONICAL_RATE, load_wav_file, resample
from .events import DrumEvent, DrumTrack
from .nn.network import forward
from .nn.train import load_checkpoint
from .smf import write_midi
from .spectrogram import FRAME_SECONDS, log_mel
from .vocab import HitVocabulary, Level, load_vocab, to_general_midi


@dataclass(frozen=True)
class DecodeConfig:
    """Peak picking: threshold plus strict local maximum per class column.

    On a plateau of equal values the earliest frame wins. Decoded velocity
    maps [0, 1] onto MIDI 1..127 via round(v * 126) + 1, so silence-level
    predictions still produce a sounding note-on.
    """

    threshold: float = 0.5
    fixed_velocity: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie strictly between 0 and 1")
        if self.fixed_velocity is not None and not 1 <= self.fixed_velocity <= 127:
            raise ValueError("fixed velocity must lie in 1..127")


def _peak_frames(column: np.ndarray, threshold: float) -> list[int]:
    """Frames that top the threshold and strictly dominate their neighborhood;
    plateaus collapse to their first frame."""
    peaks = []
    n = len(column)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and column[j + 1] == column[i]:
            j += 1
        left = column[i - 1] if i > 0 else -np.inf
        right = column[j + 1] if j + 1 < n else -np.inf
        if column[i] >= threshold and column[i] > left and column[i] > right:
            peaks.append(i)
        i = j + 1
    return peaks


def decode(onset_probs: np.ndarray, velocities: np.ndarray, config: DecodeConfig = DecodeConfig()) -> DrumTrack:
    onset_probs = np.asarray(onset_probs)
    velocities = np.asarray(velocities)
    if onset_probs.shape != velocities.shape or onset_probs.ndim != 2:
        raise ValueError("onset and velocity matrices must share a 2-D shape")
    events = []
    for cls in range(onset_probs.shape[1]):
        for frame in _peak_frames(onset_probs[:, cls], config.threshold):
            if config.fixed_velocity is not None:
                midi_velocity = config.fixed_velocity
            else:
                v = float(np.clip(velocities[frame, cls], 0.0, 1.0))
                midi_velocity = int(np.floor(v * 126.0 + 0.5)) + 1
            events.append(DrumEvent(frame * FRAME_SECONDS, cls, midi_velocity))
    duration = onset_probs.shape[0] * FRAME_SECONDS
    return DrumTrack(tuple(events), duration)


@dataclass(frozen=True)
class TranscriptionStage(Exception):
    stage: str
    cause: Exception

    def __str__(self) -> str:
        return f"transcription failed at stage {self.stage!r}: {self.cause}"


def transcribe_file(
    wav_path: str | Path,
    checkpoint_path: str | Path,
    config: DecodeConfig = DecodeConfig(),
    vocab: HitVocabulary | None = None,
) -> tuple[DrumTrack, bytes]:
    """load -> resample -> log-mel -> forward(eval) -> decode -> GM -> SMF.

    Returns the decoded GROUP7 track and the General MIDI SMF bytes.
    """
    if vocab is None:
        vocab = load_vocab(level=Level.GROUP7)

    def stage(name, fn):
        try:
            return fn()
        except Exception as exc:  # noqa: BLE001 - annotate and rethrow
            raise TranscriptionStage(name, exc) from exc

    clip = stage("load-audio", lambda: load_wav_file(wav_path))
    clip = stage("resample", lambda: resample(clip, CANONICAL_RATE))
    spec = stage("spectrogram", lambda: log_mel(clip))
    train_config, params, state, *_ = stage("load-checkpoint", lambda: load_checkpoint(checkpoint_path))
    probs, vels, _, _ = stage(
        "forward", lambda: forward(train_config.network, params, state, spec.data[None])
    )
    track = stage("decode", lambda: decode(probs[0], vels[0], config))
    gm_track = stage("gm-export", lambda: to_general_midi(track, vocab))
    smf_bytes = stage("write-midi", lambda: write_midi(gm_track))
    return track, smf_bytes
