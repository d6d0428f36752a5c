"""Standard MIDI File reading and writing for drum tracks.

Reads SMF type 0 and 1 with a full tempo map (tick times are integrated
through every tempo change to wall-clock seconds). Writes type 0 at a fixed
120 BPM: event times in seconds are authoritative, the written tempo is
cosmetic.
"""
from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field

from .events import DrumEvent, DrumTrack
from .vocab import HitVocabulary

DEFAULT_TEMPO = 500_000  # microseconds per quarter note (120 BPM)
DRUM_CHANNEL = 9
WRITE_TICKS_PER_QUARTER = 480
_MAX_VARLEN = 0x0FFF_FFFF


class SmfError(ValueError):
    """Malformed SMF data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(slots=True)
class MidiParseResult:
    """A parsed drum track plus bookkeeping about what was skipped."""

    track: DrumTrack
    skipped_pitches: Counter = field(default_factory=Counter)
    note_count: int = 0


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def need(self, n: int, what: str) -> None:
        if self.pos + n > len(self.data):
            raise SmfError(f"truncated {what}", self.pos)

    def bytes(self, n: int, what: str) -> bytes:
        self.need(n, what)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.bytes(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack(">H", self.bytes(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack(">I", self.bytes(4, what))[0]

    def varlen(self, what: str) -> int:
        value = 0
        for _ in range(4):
            byte = self.u8(what)
            value = (value << 7) | (byte & 0x7F)
            if not byte & 0x80:
                return value
        raise SmfError(f"variable-length {what} longer than 4 bytes", self.pos)


def _write_varlen(value: int) -> bytes:
    if not 0 <= value <= _MAX_VARLEN:
        raise ValueError(f"delta time {value} not representable as SMF varlen")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


@dataclass(frozen=True, slots=True)
class _RawNote:
    tick: int
    pitch: int
    velocity: int


def _read_track_events(r: _Reader, end: int, channel: int | None):
    """Scan one MTrk body, yielding (notes, tempo changes, last tick)."""
    notes: list[_RawNote] = []
    tempos: list[tuple[int, int]] = []
    tick = 0
    running_status = 0
    while r.pos < end:
        tick += r.varlen("delta time")
        status = r.data[r.pos]
        if status & 0x80:
            r.pos += 1
            # Meta and sysex events cancel running status.
            running_status = status if status < 0xF0 else 0
        else:
            if running_status == 0:
                raise SmfError("data byte without running status", r.pos)
            status = running_status
        if status == 0xFF:
            meta_type = r.u8("meta type")
            length = r.varlen("meta length")
            payload = r.bytes(length, "meta payload")
            if meta_type == 0x51:
                if length != 3:
                    raise SmfError("tempo meta event must carry 3 bytes", r.pos)
                tempos.append((tick, int.from_bytes(payload, "big")))
            elif meta_type == 0x2F:
                break
        elif status in (0xF0, 0xF7):
            length = r.varlen("sysex length")
            r.bytes(length, "sysex payload")
        else:
            kind = status & 0xF0
            chan = status & 0x0F
            if kind in (0x80, 0x90, 0xA0, 0xB0, 0xE0):
                a = r.u8("event data")
                b = r.u8("event data")
                if kind == 0x90 and b > 0 and (channel is None or chan == channel):
                    notes.append(_RawNote(tick, a, b))
            elif kind in (0xC0, 0xD0):
                r.u8("event data")
            else:
                raise SmfError(f"unexpected status byte 0x{status:02x}", r.pos - 1)
    return notes, tempos, tick


def _ticks_to_seconds(ticks: list[int], tempos: list[tuple[int, int]], division: int) -> list[float]:
    """Integrate the tempo map to convert absolute ticks to seconds."""
    changes = sorted(t for t in tempos)
    if not changes or changes[0][0] > 0:
        changes.insert(0, (0, DEFAULT_TEMPO))
    # Collapse multiple changes at the same tick: the last one wins.
    collapsed: list[tuple[int, int]] = []
    for tick, tempo in changes:
        if collapsed and collapsed[-1][0] == tick:
            collapsed[-1] = (tick, tempo)
        else:
            collapsed.append((tick, tempo))
    # Prefix seconds at each change point.
    starts = [0.0]
    for (t0, us), (t1, _) in zip(collapsed, collapsed[1:]):
        starts.append(starts[-1] + (t1 - t0) * us / (division * 1e6))
    out = []
    for tick in ticks:
        # Last change at or before this tick.
        lo, hi = 0, len(collapsed) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if collapsed[mid][0] <= tick:
                lo = mid
            else:
                hi = mid - 1
        t0, us = collapsed[lo]
        out.append(starts[lo] + (tick - t0) * us / (division * 1e6))
    return out


def parse_midi(data: bytes, vocab: HitVocabulary, channel: int | None = DRUM_CHANNEL) -> MidiParseResult:
    """Parse an SMF byte stream into a drum track.

    Note-ons with velocity > 0 on ``channel`` (pass None to accept any
    channel) whose pitch appears in the vocabulary's pitch map become events;
    other pitches are tallied in ``skipped_pitches``. Note-offs are ignored:
    drum hits do not sustain.
    """
    r = _Reader(data)
    if r.bytes(4, "header") != b"MThd":
        raise SmfError("missing MThd chunk", 0)
    header_len = r.u32("header length")
    if header_len < 6:
        raise SmfError(f"MThd length {header_len} too short", r.pos - 4)
    fmt = r.u16("format")
    ntrks = r.u16("track count")
    division = r.u16("division")
    r.bytes(header_len - 6, "header padding")
    if fmt not in (0, 1):
        raise SmfError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000:
        raise SmfError("SMPTE time division is not supported", 12)
    if division == 0:
        raise SmfError("zero ticks-per-quarter division", 12)

    all_notes: list[_RawNote] = []
    all_tempos: list[tuple[int, int]] = []
    last_tick = 0
    for _ in range(ntrks):
        if r.bytes(4, "track header") != b"MTrk":
            raise SmfError("missing MTrk chunk", r.pos - 4)
        length = r.u32("track length")
        r.need(length, "track body")
        end = r.pos + length
        notes, tempos, tick = _read_track_events(r, end, channel)
        all_notes.extend(notes)
        all_tempos.extend(tempos)
        last_tick = max(last_tick, tick)
        r.pos = end

    times = _ticks_to_seconds([n.tick for n in all_notes] + [last_tick], all_tempos, division)
    duration = times[-1]
    skipped: Counter = Counter()
    events = []
    for note, time in zip(all_notes, times):
        hit = vocab.pitch_map.get(note.pitch)
        if hit is None:
            skipped[note.pitch] += 1
        else:
            events.append(DrumEvent(time, hit, note.velocity))
    track = DrumTrack(tuple(events), duration)
    return MidiParseResult(track=track, skipped_pitches=skipped, note_count=len(all_notes))


def parse_midi_track(data: bytes, vocab: HitVocabulary, channel: int | None = DRUM_CHANNEL) -> DrumTrack:
    """Like :func:`parse_midi` but discards the skipped-pitch report."""
    return parse_midi(data, vocab, channel).track


def write_midi(
    track: DrumTrack,
    ticks_per_quarter: int = WRITE_TICKS_PER_QUARTER,
    pitch_of: dict[int, int] | None = None,
    channel: int = DRUM_CHANNEL,
) -> bytes:
    """Serialize a drum track as SMF type 0 at a fixed 120 BPM.

    ``pitch_of`` maps hit ids to MIDI pitches; by default hit ids are assumed
    to already be pitches (as produced by General MIDI export). Each hit gets
    a matching note-off an eighth-note later so external players terminate
    cleanly.
    """
    ticks_per_second = ticks_per_quarter * 1_000_000 / DEFAULT_TEMPO

    def pitch(hit: int) -> int:
        p = pitch_of[hit] if pitch_of is not None else hit
        if not 0 <= p <= 127:
            raise ValueError(f"hit {hit} maps to out-of-range pitch {p}")
        return p

    # (tick, order, status, data1, data2); note-offs sort after ons at a tick.
    messages: list[tuple[int, int, int, int, int]] = []
    for e in track.events:
        tick = round(e.time * ticks_per_second)
        p = pitch(e.hit)
        messages.append((tick, 0, 0x90 | channel, p, e.velocity))
        messages.append((tick + ticks_per_quarter // 8, 1, 0x80 | channel, p, 0))
    messages.sort()

    body = bytearray()
    body += _write_varlen(0) + bytes([0xFF, 0x51, 0x03]) + DEFAULT_TEMPO.to_bytes(3, "big")
    prev_tick = 0
    for tick, _, status, d1, d2 in messages:
        body += _write_varlen(tick - prev_tick)
        body += bytes([status, d1, d2])
        prev_tick = tick
    end_tick = max(prev_tick, round(track.duration * ticks_per_second))
    body += _write_varlen(end_tick - prev_tick) + bytes([0xFF, 0x2F, 0x00])

    header = struct.pack(">4sIHHH", b"MThd", 6, 0, 1, ticks_per_quarter)
    return header + struct.pack(">4sI", b"MTrk", len(body)) + bytes(body)
