"""Mono audio I/O and sample-rate conversion.

Waveforms are kept as 64-bit float arrays in nominal range [-1, 1].  On disk
we speak RIFF/WAVE, either 16-bit PCM or 32-bit IEEE float, little-endian.
Multi-channel files are collapsed to mono by averaging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import firwin, resample_poly

__all__ = [
    "Waveform",
    "WavFormatError",
    "UnsupportedWavError",
    "read_wav",
    "write_wav",
    "resample",
]

PCM16_FULL_SCALE = 32768.0


class WavFormatError(ValueError):
    """Raised when a file is not a well-formed RIFF/WAVE file."""


class UnsupportedWavError(WavFormatError):
    """Raised for valid WAV files whose sample encoding we do not handle."""


@dataclass(frozen=True)
class Waveform:
    """A mono signal: sample array plus its sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def rms(self) -> float:
        if len(self.samples) == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples**2)))


def read_wav(path) -> Waveform:
    """Read a PCM16 or float32 WAV file as a mono :class:`Waveform`.

    Integer samples are scaled by 1/32768 so full-scale negative maps to -1.0.
    Multi-channel data is averaged across channels.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError) as exc:
        raise WavFormatError(f"{path}: malformed WAV file ({exc})") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_FULL_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    elif data.dtype == np.float64:
        samples = data.copy()
    else:
        raise UnsupportedWavError(
            f"{path}: unsupported sample encoding {data.dtype}; "
            "expected int16 or float32"
        )

    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return Waveform(samples, int(rate))


def write_wav(path, w: Waveform, encoding: str = "pcm16") -> None:
    """Write a waveform to disk, clamping amplitudes to [-1, 1].

    With the default PCM16 encoding the write/read round trip is exact to
    within one quantization step (1/32768).
    """
    clipped = np.clip(w.samples, -1.0, 1.0)
    if encoding == "pcm16":
        quantized = np.round(clipped * PCM16_FULL_SCALE)
        quantized = np.clip(quantized, -32768, 32767).astype(np.int16)
        wavfile.write(path, w.sample_rate, quantized)
    elif encoding == "float32":
        wavfile.write(path, w.sample_rate, clipped.astype(np.float32))
    else:
        raise ValueError(f"unknown encoding {encoding!r}")


def _kaiser_sinc_filter(up: int, down: int) -> np.ndarray:
    # Windowed-sinc lowpass at the smaller Nyquist rate, 64 taps per
    # upsampling phase, Kaiser window.  Gain `up` compensates the zero
    # insertion of the polyphase upsampler.
    numtaps = 64 * up + 1
    cutoff = 1.0 / max(up, down)  # fraction of the upsampled Nyquist rate
    return up * firwin(numtaps, cutoff, window=("kaiser", 8.6))


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase band-limited resampling to ``target_rate``.

    Output length is round(len * target / source).
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)

    g = np.gcd(int(target_rate), int(w.sample_rate))
    up = int(target_rate) // g
    down = int(w.sample_rate) // g
    out = resample_poly(w.samples, up, down, window=_kaiser_sinc_filter(up, down))

    n_out = int(round(len(w.samples) * target_rate / w.sample_rate))
    if len(out) < n_out:
        out = np.pad(out, (0, n_out - len(out)))
    return Waveform(out[:n_out], target_rate)
