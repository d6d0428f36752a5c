import io
import struct

import numpy as np
import pytest
import scipy.io.wavfile

from drumscribe.audio import (
    AudioClip,
    UnsupportedWavFormat,
    WavError,
    load_wav,
    resample,
    write_wav,
    write_wav_file,
)


def pcm16_wav(samples: np.ndarray, rate: int = 44100, channels: int = 1) -> bytes:
    raw = samples.astype("<i2").tobytes()
    block = channels * 2
    return (
        struct.pack(
            "<4sI4s4sIHHIIHH4sI",
            b"RIFF", 36 + len(raw), b"WAVE", b"fmt ", 16, 1, channels,
            rate, rate * block, block, 16, b"data", len(raw),
        )
        + raw
    )


def test_16bit_full_scale_scaling():
    data = pcm16_wav(np.array([32767, -32768, 0], dtype=np.int16))
    clip = load_wav(data)
    assert clip.samples[0] == pytest.approx(32767 / 32768)
    assert clip.samples[1] == -1.0
    assert clip.samples[2] == 0.0


def test_stereo_averages_to_mono():
    interleaved = np.array([16384, -16384, 8192, 8192], dtype=np.int16)
    clip = load_wav(pcm16_wav(interleaved, channels=2))
    assert clip.samples == pytest.approx([0.0, 0.25])


def test_24bit_matches_reference_decoder(tmp_path):
    rng = np.random.default_rng(7)
    samples = (rng.uniform(-1, 1, 2048) * 0.8).astype(np.float64)
    path = tmp_path / "f.wav"
    write_wav_file(path, AudioClip(samples, 44100), bits=24)

    rate, reference = scipy.io.wavfile.read(path)
    assert rate == 44100
    # scipy returns 24-bit PCM as int32 with data in the top 3 bytes.
    reference = reference.astype(np.float64) / 2147483648.0

    ours = load_wav(path.read_bytes())
    assert np.max(np.abs(ours.samples - reference)) == 0.0


def test_float_wav_rejected():
    raw = np.zeros(4, dtype="<f4").tobytes()
    data = (
        struct.pack(
            "<4sI4s4sIHHIIHH4sI",
            b"RIFF", 36 + len(raw), b"WAVE", b"fmt ", 16, 3, 1,
            44100, 44100 * 4, 4, 32, b"data", len(raw),
        )
        + raw
    )
    with pytest.raises(UnsupportedWavFormat):
        load_wav(data)


def test_truncated_chunk_rejected():
    data = pcm16_wav(np.zeros(64, dtype=np.int16))
    header = bytearray(data[:44])
    # Claim more payload than the stream carries.
    struct.pack_into("<I", header, 40, 10_000)
    with pytest.raises(WavError):
        load_wav(bytes(header) + data[44:])


def test_wav_round_trip_16bit():
    rng = np.random.default_rng(3)
    clip = AudioClip(rng.uniform(-0.9, 0.9, 1000), 22050)
    again = load_wav(write_wav(clip))
    assert again.sample_rate == 22050
    # Write scales by 32767, read divides by 32768: rounding plus a
    # systematic |x|/32768 shrink bounds the round-trip error.
    bound = (0.5 + np.max(np.abs(clip.samples))) / 32768
    assert np.max(np.abs(again.samples - clip.samples)) <= bound + 1e-12


def test_resample_identity_same_rate():
    clip = AudioClip(np.linspace(-0.5, 0.5, 441), 44100)
    out = resample(clip, 44100)
    assert out is clip


def test_resample_length_formula():
    clip = AudioClip(np.zeros(44100), 44100)
    assert len(resample(clip, 22050)) == 22050
    assert len(resample(AudioClip(np.zeros(16000), 16000), 44100)) == 44100
    assert len(resample(AudioClip(np.zeros(1001), 44100), 22050)) == round(1001 / 2)


def test_resample_sine_preserves_tone():
    rate, target = 44100, 22050
    t = np.arange(rate * 2) / rate
    clip = AudioClip(0.5 * np.sin(2 * np.pi * 1000.0 * t), rate)
    out = resample(clip, target)
    # Window the interior to avoid edge transients, then inspect the spectrum.
    x = out.samples[2048:-2048]
    spectrum = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    freqs = np.fft.rfftfreq(len(x), 1 / target)
    peak = np.argmax(spectrum)
    assert abs(freqs[peak] - 1000.0) < 2.0
    # Sidelobes away from the tone stay 60 dB below the peak.
    exclude = np.abs(freqs - 1000.0) < 50.0
    sidelobe = spectrum[~exclude].max()
    assert 20 * np.log10(sidelobe / spectrum[peak]) < -60.0
