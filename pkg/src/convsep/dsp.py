"""Time-frequency analysis and resynthesis.

The analysis chain is: waveform -> complex STFT -> magnitude -> log-magnitude
features fed to the network.  Resynthesis combines an estimated magnitude
grid with the mixture phase and inverts with weighted overlap-add.

At 8 kHz the geometry is a 32 ms (256-sample) periodic Hann window with an
8 ms (64-sample) hop, giving F = 129 one-sided frequency bins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import Waveform

__all__ = [
    "ComplexSpectrogram",
    "MagnitudeSpectrogram",
    "FeatureMatrix",
    "stft",
    "istft",
    "log_magnitude",
    "resynthesize",
    "frames_to_samples",
    "write_spectrogram_csv",
]

DEFAULT_WINDOW_MS = 32.0
DEFAULT_HOP_MS = 8.0
LOG_FLOOR_EPS = 1e-7
_OLA_GUARD = 1e-12


@dataclass(frozen=True)
class ComplexSpectrogram:
    """One-sided STFT grid of shape (F, T) with its analysis geometry."""

    bins: np.ndarray
    frame_len: int
    hop: int
    sample_rate: int

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        object.__setattr__(self, "bins", bins)
        if bins.shape[0] != self.frame_len // 2 + 1:
            raise ValueError(
                f"expected {self.frame_len // 2 + 1} frequency rows, "
                f"got {bins.shape[0]}"
            )
        if not np.all(np.isfinite(bins)):
            raise ValueError("spectrogram contains non-finite bins")

    @property
    def n_freqs(self) -> int:
        return self.bins.shape[0]

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    def magnitude(self) -> "MagnitudeSpectrogram":
        return MagnitudeSpectrogram(
            np.abs(self.bins), self.frame_len, self.hop, self.sample_rate
        )


@dataclass(frozen=True)
class MagnitudeSpectrogram:
    """Nonnegative real grid of shape (F, T)."""

    values: np.ndarray
    frame_len: int
    hop: int
    sample_rate: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if np.any(values < 0):
            raise ValueError("magnitude values must be nonnegative")


@dataclass(frozen=True)
class FeatureMatrix:
    """Log-magnitude network input of shape (F, T), floored at log(floor_eps)."""

    values: np.ndarray
    floor_eps: float

    def __post_init__(self):
        object.__setattr__(
            self, "values", np.asarray(self.values, dtype=np.float64)
        )


def _hann_periodic(n: int) -> np.ndarray:
    # Periodic (DFT-even) Hann: exact constant overlap-add at hop = n/4.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def geometry_for_rate(sample_rate: int) -> tuple[int, int]:
    """Frame length and hop in samples for the standard 32 ms / 8 ms setup."""
    frame_len = int(round(sample_rate * DEFAULT_WINDOW_MS / 1000.0))
    hop = int(round(sample_rate * DEFAULT_HOP_MS / 1000.0))
    return frame_len, hop


def frames_to_samples(n_frames: int, sample_rate: int = 8000) -> int:
    """Waveform length that yields exactly ``n_frames`` STFT frames."""
    frame_len, hop = geometry_for_rate(sample_rate)
    return frame_len + (n_frames - 1) * hop


def stft(w: Waveform) -> ComplexSpectrogram:
    """Hann-windowed one-sided STFT, T = 1 + floor((len - frame_len) / hop)."""
    frame_len, hop = geometry_for_rate(w.sample_rate)
    x = w.samples
    if len(x) < frame_len:
        raise ValueError(
            f"waveform of {len(x)} samples is shorter than one "
            f"{frame_len}-sample frame"
        )
    n_frames = 1 + (len(x) - frame_len) // hop
    window = _hann_periodic(frame_len)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * window
    bins = np.fft.rfft(frames, axis=1).T
    return ComplexSpectrogram(bins, frame_len, hop, w.sample_rate)


def istft(s: ComplexSpectrogram) -> Waveform:
    """Weighted overlap-add inverse with Hann synthesis window.

    The output is normalized by the summed squared synthesis windows, so
    istft(stft(x)) matches x exactly on interior samples; the first and last
    frame_len samples are attenuated by the window taper.
    """
    frame_len, hop = s.frame_len, s.hop
    n_frames = s.n_frames
    window = _hann_periodic(frame_len)
    frames = np.fft.irfft(s.bins.T, n=frame_len, axis=1) * window

    n_out = frame_len + (n_frames - 1) * hop
    out = np.zeros(n_out)
    norm = np.zeros(n_out)
    for t in range(n_frames):
        sl = slice(t * hop, t * hop + frame_len)
        out[sl] += frames[t]
        norm[sl] += window**2
    out = np.where(norm > _OLA_GUARD, out / np.maximum(norm, _OLA_GUARD), 0.0)
    return Waveform(out, s.sample_rate)


def log_magnitude(s: ComplexSpectrogram, eps: float = LOG_FLOOR_EPS) -> FeatureMatrix:
    """Elementwise log(|bin| + eps); eps floors silent bins at log(eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return FeatureMatrix(np.log(np.abs(s.bins) + eps), eps)


def resynthesize(
    mag_est: MagnitudeSpectrogram, mixture: ComplexSpectrogram
) -> Waveform:
    """Invert an estimated magnitude grid using the mixture's phase."""
    if mag_est.values.shape != mixture.bins.shape:
        raise ValueError(
            f"shape mismatch: estimate {mag_est.values.shape} vs "
            f"mixture {mixture.bins.shape}"
        )
    phase = np.exp(1j * np.angle(mixture.bins))
    rebuilt = ComplexSpectrogram(
        mag_est.values * phase, mixture.frame_len, mixture.hop, mixture.sample_rate
    )
    return istft(rebuilt)


def write_spectrogram_csv(path, values: np.ndarray) -> None:
    """Dump a (F, T) grid as CSV, one row per frequency bin."""
    np.savetxt(path, np.asarray(values), delimiter=",", fmt="%.8g")
