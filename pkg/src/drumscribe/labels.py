"""Training targets: frame x class onset and velocity rolls on the 10 ms grid.

Onset labels occupy a single frame. Event times round half-down onto the
grid and clamp to the last frame; same-class collisions within one frame
keep the louder hit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .events import DrumEvent, DrumTrack
from .spectrogram import FRAME_SECONDS
from .vocab import HitVocabulary


@dataclass(frozen=True)
class LabelRoll:
    onsets: np.ndarray  # frames x classes, {0, 1} float32
    velocities: np.ndarray  # frames x classes, [0, 1] float32
    clamped_events: int = 0

    def __post_init__(self) -> None:
        onsets = np.asarray(self.onsets, dtype=np.float32)
        velocities = np.asarray(self.velocities, dtype=np.float32)
        if onsets.shape != velocities.shape or onsets.ndim != 2:
            raise ValueError("onset and velocity rolls must share a 2-D shape")
        if np.any((velocities > 0) & (onsets == 0)):
            raise ValueError("velocities must be zero off the onset cells")
        object.__setattr__(self, "onsets", onsets)
        object.__setattr__(self, "velocities", velocities)

    @property
    def n_frames(self) -> int:
        return self.onsets.shape[0]

    @property
    def n_classes(self) -> int:
        return self.onsets.shape[1]


def frame_of_time(time: float, n_frames: int) -> int:
    """Half-down rounding of a time onto the frame grid, clamped to range."""
    idx = math.ceil(time / FRAME_SECONDS - 0.5)
    return min(max(idx, 0), n_frames - 1)


def make_labels(track: DrumTrack, n_frames: int, vocab: HitVocabulary) -> LabelRoll:
    onsets = np.zeros((n_frames, vocab.size), dtype=np.float32)
    velocities = np.zeros((n_frames, vocab.size), dtype=np.float32)
    clamped = 0
    for event in track.events:
        raw = math.ceil(event.time / FRAME_SECONDS - 0.5)
        frame = min(max(raw, 0), n_frames - 1)
        if raw != frame:
            clamped += 1
        onsets[frame, event.hit] = 1.0
        velocities[frame, event.hit] = max(velocities[frame, event.hit], event.velocity / 127.0)
    return LabelRoll(onsets, velocities, clamped_events=clamped)


def roll_to_track(roll: LabelRoll, duration: float | None = None) -> DrumTrack:
    """Inverse of :func:`make_labels` for perfect rolls (used in round-trips)."""
    frames, classes = np.nonzero(roll.onsets > 0.5)
    events = tuple(
        DrumEvent(
            float(f) * FRAME_SECONDS,
            int(c),
            max(1, min(127, round(float(roll.velocities[f, c]) * 127.0))),
        )
        for f, c in zip(frames, classes)
    )
    if duration is None:
        duration = roll.n_frames * FRAME_SECONDS
    return DrumTrack(events, duration)
