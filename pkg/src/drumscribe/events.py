"""Symbolic drum events: the ground-truth and model-output representation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable


@dataclass(frozen=True, slots=True, order=True)
class DrumEvent:
    """One drum hit: onset time in seconds, vocabulary hit id, MIDI velocity 1..127.

    Ordering is (time, hit, velocity) so sorted event lists have a
    deterministic tie-break for simultaneous hits.
    """

    time: float
    hit: int
    velocity: int

    def __post_init__(self) -> None:
        if self.time < 0:
            raise ValueError(f"event time must be >= 0, got {self.time}")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity must be in 1..127, got {self.velocity}")


@dataclass(frozen=True, slots=True)
class DrumTrack:
    """An immutable, time-sorted sequence of drum hits with a total duration."""

    events: Iterable[DrumEvent]
    duration: float = 0.0

    def __post_init__(self) -> None:
        events = tuple(sorted(self.events, key=lambda e: (e.time, e.hit)))
        object.__setattr__(self, "events", events)
        last = events[-1].time if events else 0.0
        object.__setattr__(self, "duration", max(float(self.duration), last))

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def shifted(self, offset: float) -> "DrumTrack":
        """Return a copy with all event times moved by ``offset`` seconds."""
        return DrumTrack(
            tuple(DrumEvent(e.time + offset, e.hit, e.velocity) for e in self.events),
            self.duration + offset,
        )

    def with_duration(self, duration: float) -> "DrumTrack":
        return DrumTrack(self.events, duration)
