"""Synthetic speakers, two-source mixtures, and test-time perturbations.

The synthetic "speakers" are amplitude-modulated harmonic complexes with a
slowly wandering fundamental.  They stand in for a speech corpus at desk
scale while keeping the harmonic structure a separation model exploits.
Mixtures sum two sources at a requested SNR; perturbations cover white-noise
bursts and synthetic room reverberation.

All generators are deterministic functions of their seeds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .audio_io import Waveform

__all__ = [
    "SpeakerSpec",
    "MixtureExample",
    "DegenerateSourceError",
    "synth_speaker",
    "make_mixture",
    "sample_pair",
    "inject_noise_burst",
    "make_rir",
    "apply_room",
    "default_speaker_specs",
]


class DegenerateSourceError(ValueError):
    """A source has zero RMS and cannot be mixed at a defined SNR."""


@dataclass(frozen=True)
class SpeakerSpec:
    """Parameters of one synthetic harmonic 'speaker'."""

    f0_base: float
    f0_wander: float
    n_harmonics: int
    am_rate: float
    seed: int

    def __post_init__(self):
        if self.f0_base <= 0:
            raise ValueError("f0_base must be positive")
        if self.n_harmonics < 1:
            raise ValueError("need at least one harmonic")


@dataclass(frozen=True)
class MixtureExample:
    """A mixture with its constituent sources and the SNR they were mixed at."""

    mixture: Waveform
    sources: tuple[Waveform, ...]
    snr_db: float

    def __post_init__(self):
        total = sum(s.samples for s in self.sources)
        if not np.allclose(self.mixture.samples, total, atol=1e-9):
            raise ValueError("mixture must equal the sample-wise sum of sources")


def synth_speaker(spec: SpeakerSpec, duration: float, rate: int) -> Waveform:
    """Render a harmonic complex with 1/k harmonic decay, a bounded random
    walk on f0, and a sinusoidal amplitude envelope.  Peak-normalized to 0.5.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    f0_max = spec.f0_base + spec.f0_wander
    if f0_max * spec.n_harmonics >= rate / 2:
        raise ValueError(
            f"harmonic {spec.n_harmonics} of f0 up to {f0_max:.1f} Hz "
            f"exceeds the {rate / 2:.0f} Hz Nyquist rate"
        )

    n = int(round(duration * rate))
    rng = np.random.default_rng(spec.seed)

    if spec.f0_wander > 0:
        # Random walk updated at ~20 Hz, reflected into +-f0_wander, then
        # linearly interpolated to sample rate.
        n_ctrl = max(2, int(duration * 20) + 1)
        walk = np.cumsum(rng.normal(0.0, spec.f0_wander / 6.0, n_ctrl))
        period = 4.0 * spec.f0_wander
        walk = np.abs((walk + spec.f0_wander) % period - period / 2.0) - spec.f0_wander
        f0 = spec.f0_base + np.interp(
            np.arange(n) / rate, np.linspace(0.0, duration, n_ctrl), walk
        )
    else:
        f0 = np.full(n, spec.f0_base)

    phase = 2.0 * np.pi * np.cumsum(f0) / rate
    x = np.zeros(n)
    for k in range(1, spec.n_harmonics + 1):
        x += np.sin(k * phase) / k
    if spec.am_rate > 0:
        x *= 1.0 + 0.5 * np.sin(2.0 * np.pi * spec.am_rate * np.arange(n) / rate)

    peak = np.max(np.abs(x))
    if peak > 0:
        x *= 0.5 / peak
    return Waveform(x, rate)


def make_mixture(a: Waveform, b: Waveform, snr_db: float) -> MixtureExample:
    """Mix two equal-length sources at ``snr_db`` (a relative to b).

    b is scaled so 20*log10(rms(a)/rms(g*b)) = snr_db; the mixture is the
    exact sum.  If the mixture peak exceeds 0.9, mixture and sources are
    rescaled jointly, which preserves both the sum invariant and the SNR.
    """
    if len(a) != len(b) or a.sample_rate != b.sample_rate:
        raise ValueError("sources must share length and sample rate")
    rms_a, rms_b = a.rms(), b.rms()
    if rms_a == 0 or rms_b == 0:
        raise DegenerateSourceError("cannot set an SNR against a silent source")

    g = rms_a / (rms_b * 10.0 ** (snr_db / 20.0))
    sa = a.samples.copy()
    sb = g * b.samples
    mix = sa + sb

    peak = np.max(np.abs(mix)) if len(mix) else 0.0
    if peak > 0.9:
        scale = 0.9 / peak
        sa *= scale
        sb *= scale
        mix = sa + sb

    rate = a.sample_rate
    return MixtureExample(
        Waveform(mix, rate), (Waveform(sa, rate), Waveform(sb, rate)), snr_db
    )


def sample_pair(
    corpus: Sequence[Waveform], length: int, seed
) -> tuple[Waveform, Waveform]:
    """Crop two equal-length segments from two distinct speakers.

    ``corpus`` holds one waveform per speaker; ``length`` is in samples.
    Speakers are drawn uniformly without replacement, start offsets uniformly
    and independently.
    """
    if len(corpus) < 2:
        raise ValueError("corpus must contain at least two speakers")
    rng = np.random.default_rng(seed)
    i, j = rng.choice(len(corpus), size=2, replace=False)
    out = []
    for idx in (i, j):
        src = corpus[idx]
        if len(src) < length:
            raise ValueError(
                f"speaker {idx} has {len(src)} samples, need {length}"
            )
        start = int(rng.integers(0, len(src) - length + 1))
        out.append(Waveform(src.samples[start : start + length], src.sample_rate))
    return out[0], out[1]


def inject_noise_burst(
    w: Waveform, center: float, dur: float, level_db_rel: float = 0.0, seed=0
) -> Waveform:
    """Add a seeded white Gaussian burst over [center - dur/2, center + dur/2].

    The burst RMS sits ``level_db_rel`` dB relative to the whole waveform's
    RMS.  Samples outside the interval are bit-identical to the input.
    """
    if dur < 0:
        raise ValueError("dur must be nonnegative")
    if dur == 0:
        return Waveform(w.samples.copy(), w.sample_rate)
    start = int(round((center - dur / 2.0) * w.sample_rate))
    stop = int(round((center + dur / 2.0) * w.sample_rate))
    if start < 0 or stop > len(w):
        raise ValueError(
            f"burst [{start}, {stop}) lies outside the {len(w)}-sample waveform"
        )
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0, stop - start)
    noise *= w.rms() * 10.0 ** (level_db_rel / 20.0) / np.sqrt(np.mean(noise**2))
    out = w.samples.copy()
    out[start:stop] += noise
    return Waveform(out, w.sample_rate)


def make_rir(rir_seed, rt60: float, rate: int, direct_db: float = 0.0) -> np.ndarray:
    """Synthetic room impulse response: unit direct path plus an
    exponentially decaying noise tail reaching -60 dB at ``rt60`` seconds,
    truncated at 3 * rt60.  ``direct_db`` is the direct-to-reverberant energy
    ratio (0 dB means tail energy equals the direct path)."""
    if rt60 <= 0:
        raise ValueError("rt60 must be positive")
    n = max(1, int(round(3.0 * rt60 * rate)))
    rir = np.zeros(n)
    rir[0] = 1.0
    if n > 1:
        rng = np.random.default_rng(rir_seed)
        t = np.arange(1, n) / rate
        decay = np.exp(-np.log(1000.0) * t / rt60)  # -60 dB amplitude at rt60
        sigma = np.sqrt(2.0 * np.log(1000.0) / (rt60 * rate))
        sigma *= 10.0 ** (-direct_db / 20.0)
        rir[1:] = sigma * rng.normal(0.0, 1.0, n - 1) * decay
    return rir


def apply_room(w: Waveform, rir_seed, rt60: float, direct_db: float = 0.0) -> Waveform:
    """Convolve with a seeded synthetic RIR, cropped to the input length."""
    rir = make_rir(rir_seed, rt60, w.sample_rate, direct_db)
    wet = fftconvolve(w.samples, rir)[: len(w)]
    return Waveform(wet, w.sample_rate)


def default_speaker_specs(
    n_speakers: int = 8,
    seed: int = 0,
    f0_range: tuple[float, float] = (100.0, 300.0),
    am_range: tuple[float, float] = (2.0, 8.0),
    n_harmonics: int = 8,
) -> list[SpeakerSpec]:
    """Distinct speaker specs spread evenly over the f0 and AM-rate ranges."""
    f0s = np.linspace(f0_range[0], f0_range[1], n_speakers)
    ams = np.linspace(am_range[0], am_range[1], n_speakers)
    return [
        SpeakerSpec(
            f0_base=float(f0s[i]),
            f0_wander=0.05 * float(f0s[i]),
            n_harmonics=n_harmonics,
            am_rate=float(ams[i]),
            seed=seed * 1000 + i,
        )
        for i in range(n_speakers)
    ]
