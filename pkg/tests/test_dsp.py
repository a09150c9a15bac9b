"""STFT geometry, round trips, and mixture-phase resynthesis."""

import numpy as np
import pytest

from convsep.audio_io import Waveform
from convsep.dsp import (
    ComplexSpectrogram,
    MagnitudeSpectrogram,
    frames_to_samples,
    geometry_for_rate,
    istft,
    log_magnitude,
    resynthesize,
    stft,
    write_spectrogram_csv,
)


def _noise(n, seed=0, rate=8000):
    rng = np.random.default_rng(seed)
    return Waveform(rng.uniform(-0.9, 0.9, n), rate)


def test_geometry_8khz():
    frame_len, hop = geometry_for_rate(8000)
    assert (frame_len, hop) == (256, 64)


def test_stft_shape():
    s = stft(_noise(8000))
    assert s.n_freqs == 129
    assert s.n_frames == 1 + (8000 - 256) // 64


def test_frames_to_samples_inverts_frame_count():
    for n_frames in (1, 2, 100, 400):
        n = frames_to_samples(n_frames, 8000)
        assert stft(_noise(n)).n_frames == n_frames


def test_stft_too_short_raises():
    with pytest.raises(ValueError):
        stft(_noise(100))


def test_round_trip_interior():
    for seed in range(5):
        w = _noise(4000, seed)
        back = istft(stft(w))
        core = slice(256, len(back) - 256)
        err = np.max(np.abs(back.samples[core] - w.samples[core]))
        assert err < 1e-10 * np.max(np.abs(w.samples))


def test_istft_length():
    s = stft(_noise(frames_to_samples(50)))
    assert len(istft(s)) == frames_to_samples(50)


def test_spectrogram_invariants():
    with pytest.raises(ValueError):
        ComplexSpectrogram(np.zeros((100, 4)), 256, 64, 8000)
    bad = np.zeros((129, 4), dtype=complex)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        ComplexSpectrogram(bad, 256, 64, 8000)
    with pytest.raises(ValueError):
        MagnitudeSpectrogram(-np.ones((129, 4)), 256, 64, 8000)


def test_log_magnitude_floor():
    s = stft(Waveform(np.zeros(2000), 8000))
    feats = log_magnitude(s)
    assert np.allclose(feats.values, np.log(1e-7))
    with pytest.raises(ValueError):
        log_magnitude(s, eps=0.0)


def test_resynthesize_with_own_magnitude_is_round_trip():
    w = _noise(4000, 3)
    s = stft(w)
    back = resynthesize(s.magnitude(), s)
    core = slice(256, len(back) - 256)
    assert np.allclose(back.samples[core], w.samples[core], atol=1e-10)


def test_resynthesize_shape_mismatch():
    s = stft(_noise(4000))
    wrong = MagnitudeSpectrogram(np.zeros((129, 3)), 256, 64, 8000)
    with pytest.raises(ValueError):
        resynthesize(wrong, s)


def test_resynthesize_uses_mixture_phase():
    w = _noise(4000, 4)
    s = stft(w)
    halved = MagnitudeSpectrogram(
        0.5 * np.abs(s.bins), s.frame_len, s.hop, s.sample_rate
    )
    back = resynthesize(halved, s)
    core = slice(256, len(back) - 256)
    assert np.allclose(back.samples[core], 0.5 * w.samples[core], atol=1e-10)


def test_write_spectrogram_csv(tmp_path):
    values = np.arange(12.0).reshape(3, 4)
    path = tmp_path / "g.csv"
    write_spectrogram_csv(path, values)
    back = np.loadtxt(path, delimiter=",")
    assert np.allclose(back, values)
