"""Hit vocabularies and the 25 -> 7 -> 3 class hierarchy, plus General MIDI export.

A vocabulary lives at one of three levels:

* ``FULL25`` -- every articulation the source kit distinguishes (one id per
  config row);
* ``GROUP7`` -- kick / snare / tom / hi-hat / crash / ride / bell groups;
* ``GROUP3`` -- the classic kick / snare / hi-hat reduction.

The hierarchy and the pitch assignment are loaded from a text config with one
``pitch,name,group7,group3`` row per hit (see ``data/egmd_vocab_v1.csv``).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .events import DrumEvent, DrumTrack


class Level(enum.Enum):
    FULL25 = "full25"
    GROUP7 = "group7"
    GROUP3 = "group3"


# Coarseness order: FULL25 is the finest, GROUP3 the coarsest.
_COARSENESS = {Level.FULL25: 0, Level.GROUP7: 1, Level.GROUP3: 2}

GROUP7_NAMES = ("KD", "SD", "TT", "HH", "CY", "RD", "BE")
GROUP3_NAMES = ("KD", "SD", "HH")

# General MIDI percussion pitches used for resynthesis, keyed by 7-class name.
GM_PITCHES = {
    "KD": 36,  # Bass Drum 1
    "SD": 38,  # Acoustic Snare
    "HH": 42,  # Closed Hi Hat
    "TT": 47,  # Low-Mid Tom
    "CY": 49,  # Crash Cymbal 1
    "RD": 51,  # Ride Cymbal 1
    "BE": 53,  # Ride Bell
}


class VocabError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class VocabRow:
    """One config row: a named articulation with its group assignments."""

    pitch: int
    name: str
    group7: str
    group3: str


@dataclass(frozen=True, slots=True)
class HitVocabulary:
    """A class vocabulary at a fixed hierarchy level.

    ``pitch_map`` sends raw MIDI pitches to hit ids at this level;
    ``group7_of``/``group3_of`` send this level's ids to coarser ids.
    """

    level: Level
    entries: tuple[tuple[int, str], ...]
    pitch_map: dict[int, int]
    rows: tuple[VocabRow, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for _, name in self.entries)

    @property
    def size(self) -> int:
        return len(self.entries)

    def id_of(self, name: str) -> int:
        for hit_id, hit_name in self.entries:
            if hit_name == name:
                return hit_id
        raise VocabError(f"unknown hit name {name!r} at level {self.level.value}")

    def name_of(self, hit_id: int) -> str:
        if not 0 <= hit_id < len(self.entries):
            raise VocabError(f"hit id {hit_id} out of range at level {self.level.value}")
        return self.entries[hit_id][1]

    def at_level(self, level: Level) -> "HitVocabulary":
        return _vocab_at_level(self.rows, level)

    def map_id(self, hit_id: int, to: Level) -> int:
        """Map a hit id at this vocabulary's level to the id at a coarser level."""
        if _COARSENESS[to] < _COARSENESS[self.level]:
            raise VocabError(f"cannot map {self.level.value} to finer level {to.value}")
        if to is self.level:
            return hit_id
        name = self.name_of(hit_id)
        if self.level is Level.FULL25:
            row = self.rows[hit_id]
            target = row.group7 if to is Level.GROUP7 else row.group3
        else:  # GROUP7 -> GROUP3
            for row in self.rows:
                if row.group7 == name:
                    target = row.group3
                    break
            else:  # pragma: no cover - totality guaranteed by config validation
                raise VocabError(f"no group3 assignment for {name}")
        return self.at_level(to).id_of(target)


def _parse_rows(text: str, source: str) -> tuple[VocabRow, ...]:
    rows: list[VocabRow] = []
    seen_pitches: set[int] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise VocabError(f"{source}:{lineno}: expected pitch,name,group7,group3")
        try:
            pitch = int(parts[0])
        except ValueError as exc:
            raise VocabError(f"{source}:{lineno}: bad pitch {parts[0]!r}") from exc
        if not 0 <= pitch <= 127:
            raise VocabError(f"{source}:{lineno}: pitch {pitch} outside 0..127")
        if pitch in seen_pitches:
            raise VocabError(f"{source}:{lineno}: duplicate pitch {pitch}")
        seen_pitches.add(pitch)
        name, group7, group3 = parts[1], parts[2], parts[3]
        if group7 not in GROUP7_NAMES:
            raise VocabError(f"{source}:{lineno}: unknown group7 code {group7!r}")
        if group3 not in GROUP3_NAMES:
            raise VocabError(f"{source}:{lineno}: unknown group3 code {group3!r}")
        rows.append(VocabRow(pitch, name, group7, group3))
    if not rows:
        raise VocabError(f"{source}: no vocabulary rows found")
    missing7 = set(GROUP7_NAMES) - {r.group7 for r in rows}
    missing3 = set(GROUP3_NAMES) - {r.group3 for r in rows}
    if missing7:
        raise VocabError(f"{source}: group7 map not surjective, missing {sorted(missing7)}")
    if missing3:
        raise VocabError(f"{source}: group3 map not surjective, missing {sorted(missing3)}")
    return tuple(rows)


def _vocab_at_level(rows: tuple[VocabRow, ...], level: Level) -> HitVocabulary:
    if level is Level.FULL25:
        entries = tuple((i, r.name) for i, r in enumerate(rows))
        pitch_map = {r.pitch: i for i, r in enumerate(rows)}
    else:
        names = GROUP7_NAMES if level is Level.GROUP7 else GROUP3_NAMES
        entries = tuple(enumerate(names))
        index = {n: i for i, n in enumerate(names)}
        key = (lambda r: r.group7) if level is Level.GROUP7 else (lambda r: r.group3)
        pitch_map = {r.pitch: index[key(r)] for r in rows}
    return HitVocabulary(level=level, entries=entries, pitch_map=pitch_map, rows=rows)


def load_vocab(path: str | Path | None = None, level: Level = Level.GROUP7) -> HitVocabulary:
    """Load a vocabulary config; defaults to the bundled 25-hit table."""
    if path is None:
        text = resources.files("drumscribe.data").joinpath("egmd_vocab_v1.csv").read_text()
        source = "egmd_vocab_v1.csv"
    else:
        text = Path(path).read_text()
        source = str(path)
    return _vocab_at_level(_parse_rows(text, source), level)


def map_hits(track: DrumTrack, vocab: HitVocabulary, to: Level) -> DrumTrack:
    """Regroup a track's hits to a coarser level; times and velocities unchanged."""
    if _COARSENESS[to] < _COARSENESS[vocab.level]:
        raise VocabError(f"cannot map {vocab.level.value} to finer level {to.value}")
    if to is vocab.level:
        return track
    id_map = {hit_id: vocab.map_id(hit_id, to) for hit_id, _ in vocab.entries}
    events = tuple(DrumEvent(e.time, id_map[e.hit], e.velocity) for e in track.events)
    return DrumTrack(events, track.duration)


def to_general_midi(track: DrumTrack, vocab: HitVocabulary) -> DrumTrack:
    """Rewrite a 7-class track onto General MIDI percussion pitches.

    The returned track's ``hit`` fields hold GM pitch numbers rather than
    vocabulary ids; velocities and times are preserved.
    """
    if vocab.level is not Level.GROUP7:
        raise VocabError("General MIDI export requires a GROUP7 track")
    gm = {hit_id: GM_PITCHES[name] for hit_id, name in vocab.entries}
    events = tuple(DrumEvent(e.time, gm[e.hit], e.velocity) for e in track.events)
    return DrumTrack(events, track.duration)
