"""Crash-safe rating persistence.

One JSON record per line, appended and fsync'd before the caller sees an
acknowledgment; replay on startup tolerates a torn final line (the only kind
of damage an append-only log can suffer from a crash) and deduplicates by
(rater, question).
"""
from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path

LIKERT_MIN, LIKERT_MAX = 1, 5


class RatingError(ValueError):
    pass


class DuplicateRating(RatingError):
    pass


@dataclass(frozen=True)
class Rating:
    question_id: str
    clip_id: str
    model_a: str
    model_b: str
    winner: str  # "A" or "B", relative to the model_a/model_b fields
    likert: int
    rater_id: str
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if self.winner not in ("A", "B"):
            raise RatingError(f"winner must be 'A' or 'B', got {self.winner!r}")
        if not LIKERT_MIN <= self.likert <= LIKERT_MAX:
            raise RatingError(f"likert must be in {LIKERT_MIN}..{LIKERT_MAX}, got {self.likert}")
        if self.model_a == self.model_b:
            raise RatingError("a rating must compare two distinct models")
        if not self.rater_id:
            raise RatingError("rater id must be nonempty")

    @property
    def winning_model(self) -> str:
        return self.model_a if self.winner == "A" else self.model_b


class RatingStore:
    """Append-only store; safe for concurrent appends within one process."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._by_key: dict[tuple[str, str], Rating] = {}
        self._replay()

    def _replay(self) -> None:
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()
            return
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    rating = Rating(**record)
                except (json.JSONDecodeError, TypeError, RatingError):
                    # A torn trailing line from a crash mid-write; the rating
                    # was never acknowledged, so dropping it is correct.
                    continue
                self._by_key.setdefault((rating.rater_id, rating.question_id), rating)

    def append(self, rating: Rating) -> None:
        """Persist one rating; returns only after the bytes are fsync'd."""
        key = (rating.rater_id, rating.question_id)
        with self._lock:
            if key in self._by_key:
                raise DuplicateRating(f"rater {rating.rater_id!r} already answered {rating.question_id!r}")
            if rating.timestamp == 0.0:
                rating = Rating(**{**asdict(rating), "timestamp": time.time()})
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(asdict(rating), sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._by_key[key] = rating

    def has(self, rater_id: str, question_id: str) -> bool:
        return (rater_id, question_id) in self._by_key

    def ratings(self) -> list[Rating]:
        return list(self._by_key.values())

    def answered_by(self, rater_id: str) -> set[str]:
        return {q for (r, q) in self._by_key if r == rater_id}

    def counts_per_question(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for (_, question_id) in self._by_key:
            counts[question_id] = counts.get(question_id, 0) + 1
        return counts

    def __len__(self) -> int:
        return len(self._by_key)


def load_ratings(path: str | Path) -> list[Rating]:
    return RatingStore(path).ratings()
