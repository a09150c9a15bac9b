"""Separation metrics: projections, permutation search, designed cases."""

import numpy as np
import pytest

from convsep.audio_io import Waveform
from convsep.bsseval import bss_eval_sources, project_onto_delays

RATE = 8000


def _random_sources(n, seed=0, n_src=2):
    rng = np.random.default_rng(seed)
    return [Waveform(rng.normal(0, 0.1, n), RATE) for _ in range(n_src)]


def delay_matrix(refs, filt_len):
    """Dense (n + L - 1, C * L) matrix of zero-padded delayed references."""
    n = len(refs[0])
    cols = []
    for r in refs:
        for d in range(filt_len):
            col = np.zeros(n + filt_len - 1)
            col[d : d + n] = r.samples
            cols.append(col)
    return np.stack(cols, axis=1)


def orthogonal_noise(refs, filt_len, seed):
    """Noise supported on the first n samples, exactly orthogonal to every
    delayed reference (so it lands entirely in the artifact term)."""
    n = len(refs[0])
    d = delay_matrix(refs, filt_len)[:n, :]
    rng = np.random.default_rng(seed)
    w = rng.normal(size=n)
    coeffs, *_ = np.linalg.lstsq(d, w, rcond=None)
    w = w - d @ coeffs
    return w


def test_perfect_estimates_score_high():
    refs = _random_sources(4000, seed=0)
    score = bss_eval_sources(refs, refs, filt_len=64)
    assert np.all(score.sdr_db >= 100.0)
    assert score.permutation == (0, 1)


def test_gain_invariance():
    refs = _random_sources(4000, seed=1)
    scaled = [Waveform(3.0 * refs[0].samples, RATE),
              Waveform(0.25 * refs[1].samples, RATE)]
    score = bss_eval_sources(scaled, refs, filt_len=64)
    assert np.all(score.sdr_db >= 100.0)


def test_permutation_recovery():
    refs = _random_sources(4000, seed=2)
    score = bss_eval_sources(list(reversed(refs)), refs, filt_len=64)
    assert score.permutation == (1, 0)
    assert np.all(score.sdr_db >= 100.0)


def test_scores_indexed_by_reference():
    refs = _random_sources(4000, seed=3)
    rng = np.random.default_rng(4)
    ests = [Waveform(r.samples + s * rng.normal(0, 0.01, 4000), RATE)
            for r, s in zip(refs, (1.0, 5.0))]
    fwd = bss_eval_sources(ests, refs, filt_len=64)
    rev = bss_eval_sources(list(reversed(ests)), refs, filt_len=64)
    assert np.allclose(fwd.sdr_db, rev.sdr_db)
    assert fwd.sdr_db[0] > fwd.sdr_db[1]


def test_designed_sdr_hit_exactly():
    filt_len = 64
    refs = _random_sources(3000, seed=5)
    for target_sdr in (5.0, 12.0, 25.0):
        ests = []
        for i, r in enumerate(refs):
            w = orthogonal_noise(refs, filt_len, seed=100 + i)
            beta = np.linalg.norm(r.samples) / (
                np.linalg.norm(w) * 10.0 ** (target_sdr / 20.0)
            )
            ests.append(Waveform(r.samples + beta * w, RATE))
        score = bss_eval_sources(ests, refs, filt_len=filt_len)
        assert np.max(np.abs(score.sdr_db - target_sdr)) < 0.5


def test_matches_dense_least_squares():
    filt_len = 16
    refs = _random_sources(300, seed=6)
    rng = np.random.default_rng(7)
    est = Waveform(refs[0].samples + rng.normal(0, 0.05, 300), RATE)

    s_target, e_interf, e_artif = project_onto_delays(est, refs, filt_len)

    d = delay_matrix(refs, filt_len)
    est_pad = np.concatenate([est.samples, np.zeros(filt_len - 1)])
    coeffs, *_ = np.linalg.lstsq(d, est_pad, rcond=None)
    proj_all = d @ coeffs
    d0 = delay_matrix(refs[:1], filt_len)
    c0, *_ = np.linalg.lstsq(d0, est_pad, rcond=None)
    s_target_ref = d0 @ c0

    assert np.max(np.abs(s_target - s_target_ref)) < 1e-8
    assert np.max(np.abs(e_interf - (proj_all - s_target_ref))) < 1e-8
    assert np.max(np.abs(e_artif - (est_pad - proj_all))) < 1e-8


def test_decomposition_is_additive():
    refs = _random_sources(2000, seed=8)
    rng = np.random.default_rng(9)
    est = Waveform(refs[0].samples + 0.3 * refs[1].samples
                   + rng.normal(0, 0.02, 2000), RATE)
    s_target, e_interf, e_artif = project_onto_delays(est, refs, 64)
    est_pad = np.concatenate([est.samples, np.zeros(63)])
    assert np.allclose(s_target + e_interf + e_artif, est_pad, atol=1e-10)


def test_mixture_as_estimate_scores_near_zero():
    refs = _random_sources(4000, seed=10)
    mix = Waveform(refs[0].samples + refs[1].samples, RATE)
    score = bss_eval_sources([mix, mix], refs, filt_len=64)
    assert np.max(np.abs(score.sdr_db)) < 1.0


def test_input_validation():
    refs = _random_sources(1000, seed=11)
    with pytest.raises(ValueError):
        bss_eval_sources(refs[:1], refs)
    with pytest.raises(ValueError):
        bss_eval_sources([Waveform(np.zeros(500), RATE)] * 2, refs)
    with pytest.raises(ValueError):
        bss_eval_sources(refs, refs, filt_len=2000)
    silent = [Waveform(np.zeros(1000), RATE), refs[1]]
    with pytest.raises(ValueError):
        bss_eval_sources(refs, silent, filt_len=64)
