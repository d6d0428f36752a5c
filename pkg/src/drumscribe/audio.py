"""WAV decoding/encoding and sample-rate conversion.

Decodes RIFF/WAVE PCM at 16 or 24 bits, 1-2 channels, to mono float in
[-1, 1]. Resampling is windowed-sinc polyphase via scipy with the output
length pinned to ``round(n * target / source)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

CANONICAL_RATE = 44_100


class WavError(ValueError):
    pass


class UnsupportedWavFormat(WavError):
    pass


@dataclass(frozen=True)
class AudioClip:
    """Mono audio: float64 samples in [-1, 1] plus a sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def load_wav(data: bytes) -> AudioClip:
    """Decode a PCM WAV byte stream; stereo is averaged down to mono."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError("not a RIFF/WAVE stream")
    pos = 12
    fmt = None
    raw = None
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        if body_start + size > len(data):
            raise WavError(f"truncated {chunk_id!r} chunk at byte {pos}")
        if chunk_id == b"fmt ":
            if size < 16:
                raise WavError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", data, body_start)
        elif chunk_id == b"data":
            raw = data[body_start : body_start + size]
        pos = body_start + size + (size & 1)  # chunks are word-aligned
    if fmt is None:
        raise WavError("missing fmt chunk")
    if raw is None:
        raise WavError("missing data chunk")

    audio_format, channels, rate, _, block_align, bits = fmt
    if audio_format != 1:
        raise UnsupportedWavFormat(f"only integer PCM is supported (format tag {audio_format})")
    if bits not in (16, 24):
        raise UnsupportedWavFormat(f"only 16- or 24-bit PCM is supported, got {bits}")
    if channels not in (1, 2):
        raise UnsupportedWavFormat(f"only mono or stereo is supported, got {channels} channels")
    if block_align != channels * bits // 8:
        raise WavError(f"block alignment {block_align} inconsistent with format")

    frame_bytes = channels * bits // 8
    usable = len(raw) - len(raw) % frame_bytes
    if bits == 16:
        samples = np.frombuffer(raw[:usable], dtype="<i2").astype(np.float64) / 32768.0
    else:
        b = np.frombuffer(raw[:usable], dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        value = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        value = np.where(value & 0x800000, value - (1 << 24), value)
        samples = value.astype(np.float64) / 8388608.0
    if channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples, rate)


def load_wav_file(path: str | Path) -> AudioClip:
    return load_wav(Path(path).read_bytes())


def wav_duration(path: str | Path) -> float:
    """Duration in seconds from the WAV header, without decoding samples."""
    clip = load_wav_file(path)
    return clip.duration


def write_wav(clip: AudioClip, bits: int = 16) -> bytes:
    """Encode mono PCM WAV (16- or 24-bit); samples are clipped to [-1, 1]."""
    samples = np.clip(clip.samples, -1.0, 1.0)
    if bits == 16:
        ints = np.round(samples * 32767.0).astype("<i2")
        raw = ints.tobytes()
    elif bits == 24:
        ints = np.round(samples * 8388607.0).astype(np.int32)
        b = np.empty((len(ints), 3), dtype=np.uint8)
        b[:, 0] = ints & 0xFF
        b[:, 1] = (ints >> 8) & 0xFF
        b[:, 2] = (ints >> 16) & 0xFF
        raw = b.tobytes()
    else:
        raise ValueError("write_wav supports 16- or 24-bit output")
    block_align = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(raw),
        b"WAVE",
        b"fmt ",
        16,
        1,
        1,
        clip.sample_rate,
        clip.sample_rate * block_align,
        block_align,
        bits,
        b"data",
        len(raw),
    )
    return header + raw


def write_wav_file(path: str | Path, clip: AudioClip, bits: int = 16) -> None:
    Path(path).write_bytes(write_wav(clip, bits))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase windowed-sinc resampling; same-rate input is returned as-is.

    Output length is exactly ``round(n * target / source)``.
    """
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    n_out = int(round(len(clip.samples) * target_rate / clip.sample_rate))
    if len(clip.samples) == 0:
        return AudioClip(np.zeros(0), target_rate)
    g = gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    out = resample_poly(clip.samples, up, down, window=("kaiser", 9.0))
    if len(out) >= n_out:
        out = out[:n_out]
    else:
        out = np.pad(out, (0, n_out - len(out)))
    return AudioClip(out, target_rate)
