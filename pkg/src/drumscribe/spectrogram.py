"""Log-mel spectrogram frontend.

Frames are 10 ms wide: hop 441 samples at 44.1 kHz, 250 mel bands. Frame k is
a 2048-sample Hann window centered on sample k*441 (reflection padded), so a
clip of n samples yields exactly ceil(n / 441) frames.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import CANONICAL_RATE, AudioClip, resample

HOP = 441
N_BINS = 250
N_FFT = 2048
WINDOW = 2048
FMIN = 20.0
LOG_EPS = 1e-6
FRAME_SECONDS = HOP / CANONICAL_RATE  # 10 ms


class SpectrogramError(ValueError):
    pass


@dataclass(frozen=True)
class Spectrogram:
    """frames x bins log-mel energy matrix on the 10 ms grid."""

    data: np.ndarray
    frame_seconds: float = FRAME_SECONDS

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise SpectrogramError("spectrogram must be a 2-D matrix")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]


def n_frames_for_samples(n_samples: int) -> int:
    return math.ceil(n_samples / HOP)


def _hertz_to_mel(f):
    return 1127.0 * np.log(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hertz(m):
    return 700.0 * (np.exp(np.asarray(m, dtype=np.float64) / 1127.0) - 1.0)


def mel_band_centers(n_bins: int = N_BINS, fmin: float = FMIN, fmax: float = CANONICAL_RATE / 2) -> np.ndarray:
    """Center frequencies (Hz) of the triangular mel bands."""
    edges = np.linspace(_hertz_to_mel(fmin), _hertz_to_mel(fmax), n_bins + 2)
    return _mel_to_hertz(edges[1:-1])


def mel_filterbank(
    n_bins: int = N_BINS,
    n_fft: int = N_FFT,
    sample_rate: int = CANONICAL_RATE,
    fmin: float = FMIN,
    fmax: float | None = None,
) -> np.ndarray:
    """Triangular mel weights of shape (n_fft//2 + 1, n_bins), unit peak."""
    if fmax is None:
        fmax = sample_rate / 2
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    fft_mels = _hertz_to_mel(fft_freqs)
    edges = np.linspace(_hertz_to_mel(fmin), _hertz_to_mel(fmax), n_bins + 2)
    lower = edges[:-2][None, :]
    center = edges[1:-1][None, :]
    upper = edges[2:][None, :]
    up_slope = (fft_mels[:, None] - lower) / (center - lower)
    down_slope = (upper - fft_mels[:, None]) / (upper - center)
    return np.maximum(0.0, np.minimum(up_slope, down_slope))


def _periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_power(samples: np.ndarray) -> np.ndarray:
    """Power spectrum per frame: (ceil(n/441)) x (N_FFT//2 + 1)."""
    n = len(samples)
    if n == 0:
        raise SpectrogramError("cannot compute a spectrogram of empty audio")
    n_frames = n_frames_for_samples(n)
    half = WINDOW // 2
    pad_right = max((n_frames - 1) * HOP + WINDOW - half - n, 0)
    if n - 1 >= max(half, pad_right):
        padded = np.pad(samples, (half, pad_right), mode="reflect")
    else:
        padded = np.pad(samples, (half, pad_right))
    window = _periodic_hann(WINDOW)
    starts = np.arange(n_frames) * HOP
    shape = (n_frames, WINDOW)
    strides = (padded.strides[0] * HOP, padded.strides[0])
    frames = np.lib.stride_tricks.as_strided(padded, shape=shape, strides=strides)
    spectrum = np.fft.rfft(frames * window, n=N_FFT)
    return np.abs(spectrum) ** 2


def log_mel(clip: AudioClip) -> Spectrogram:
    """Compute the 250-band log-mel spectrogram; resamples to 44.1 kHz first."""
    if len(clip.samples) == 0:
        raise SpectrogramError("cannot compute a spectrogram of an empty clip")
    if clip.sample_rate != CANONICAL_RATE:
        clip = resample(clip, CANONICAL_RATE)
    power = stft_power(clip.samples)
    mel = power @ mel_filterbank()
    return Spectrogram(np.log(mel + LOG_EPS).astype(np.float32))


_DUMP_HEADER = struct.Struct("<II")


def dump_spectrogram(spec: Spectrogram, path: str | Path) -> None:
    """Flat binary dump: uint32 frames, uint32 bins, then row-major float32."""
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(spec.n_frames, spec.n_bins))
        fh.write(np.ascontiguousarray(spec.data, dtype="<f4").tobytes())


def load_spectrogram_dump(path: str | Path) -> Spectrogram:
    raw = Path(path).read_bytes()
    if len(raw) < _DUMP_HEADER.size:
        raise SpectrogramError("truncated spectrogram dump header")
    frames, bins = _DUMP_HEADER.unpack_from(raw)
    expected = _DUMP_HEADER.size + 4 * frames * bins
    if len(raw) != expected:
        raise SpectrogramError(f"spectrogram dump size {len(raw)} != expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=_DUMP_HEADER.size).reshape(frames, bins)
    return Spectrogram(data.copy())
