import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drumscribe.audio import AudioClip
from drumscribe.spectrogram import (
    HOP,
    LOG_EPS,
    N_BINS,
    SpectrogramError,
    dump_spectrogram,
    load_spectrogram_dump,
    log_mel,
    mel_band_centers,
    n_frames_for_samples,
)


def test_12s_clip_is_1200_by_250():
    clip = AudioClip(np.zeros(529_200), 44100)
    spec = log_mel(clip)
    assert spec.data.shape == (1200, 250)


def test_silence_is_constant_log_eps():
    spec = log_mel(AudioClip(np.zeros(44100), 44100))
    assert np.allclose(spec.data, np.log(LOG_EPS), atol=1e-6)


def test_empty_clip_rejected():
    with pytest.raises(SpectrogramError):
        log_mel(AudioClip(np.zeros(0), 44100))


@given(st.integers(min_value=1, max_value=500_000))
@settings(max_examples=200, deadline=None)
def test_frame_count_formula(n):
    assert n_frames_for_samples(n) == math.ceil(n / HOP)


def test_frame_count_matches_output():
    for n in (1, 440, 441, 442, 44100, 52919, 52920):
        clip = AudioClip(np.random.default_rng(n).uniform(-0.1, 0.1, n), 44100)
        assert log_mel(clip).n_frames == math.ceil(n / HOP)


def test_440hz_tone_peaks_at_nearest_band():
    t = np.arange(44100) / 44100
    clip = AudioClip(0.5 * np.sin(2 * np.pi * 440.0 * t), 44100)
    spec = log_mel(clip)
    centers = mel_band_centers()
    # Oracle: the band whose center is nearest 440 Hz, computed from the
    # filterbank's own center formula.
    expected = int(np.argmin(np.abs(centers - 440.0)))
    middle = spec.data[spec.n_frames // 2]
    assert int(np.argmax(middle)) == expected


def test_band_centers_cover_audible_range():
    centers = mel_band_centers()
    assert len(centers) == N_BINS
    assert centers[0] > 20.0
    assert centers[-1] < 22050.0
    assert np.all(np.diff(centers) > 0)


def test_shift_covariance():
    rng = np.random.default_rng(11)
    n = 44100
    x = rng.uniform(-0.5, 0.5, n)
    k = 3
    delayed = np.concatenate([np.zeros(k * HOP), x])
    ref = log_mel(AudioClip(x, 44100)).data
    shifted = log_mel(AudioClip(delayed, 44100)).data
    # Interior rows (clear of both boundary paddings) shift by exactly k.
    margin = 4
    np.testing.assert_allclose(
        shifted[k + margin : ref.shape[0] - margin],
        ref[margin : ref.shape[0] - margin - k],
        atol=1e-5,
    )


def test_amplitude_monotonicity():
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.4, 0.4, 22050)
    low = log_mel(AudioClip(x, 44100)).data
    high = log_mel(AudioClip(np.clip(2.0 * x, -1, 1), 44100)).data
    assert np.all(high >= low - 1e-6)


def test_resamples_other_rates_first():
    clip = AudioClip(np.zeros(16000), 16000)
    spec = log_mel(clip)
    assert spec.n_frames == math.ceil(44100 / HOP)


def test_dump_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    spec = log_mel(AudioClip(rng.uniform(-0.3, 0.3, 22050), 44100))
    path = tmp_path / "spec.bin"
    dump_spectrogram(spec, path)
    again = load_spectrogram_dump(path)
    assert again.data.shape == spec.data.shape
    assert np.array_equal(again.data, spec.data)
    with open(path, "rb") as fh:
        header = fh.read(8)
    assert int.from_bytes(header[:4], "little") == spec.n_frames
    assert int.from_bytes(header[4:], "little") == spec.n_bins
