"""Blind source separation metrics: SDR, SIR, SAR.

Each estimate is decomposed by least-squares projection onto the subspace
spanned by 0..filt_len-1 sample delays of the reference signals: the part
explained by the matched reference (s_target), the part explained by the
other references (e_interf), and the residual (e_artif).  The projections
make the scores insensitive to gain and small filtering of the estimate.

With several sources, every estimate-to-reference assignment is scored and
the permutation maximizing the mean SIR is reported.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, solve, toeplitz
from scipy.signal import fftconvolve

from .audio_io import Waveform

__all__ = [
    "SeparationScore",
    "DEFAULT_FILT_LEN",
    "project_onto_delays",
    "bss_eval_sources",
]

DEFAULT_FILT_LEN = 512


@dataclass(frozen=True)
class SeparationScore:
    """Per-source scores in dB, indexed by reference source.

    ``permutation[i]`` is the estimate assigned to reference i, so the
    scores do not depend on the order the estimates were supplied in.
    """

    sdr_db: np.ndarray
    sir_db: np.ndarray
    sar_db: np.ndarray
    permutation: tuple[int, ...]


class _DelayProjector:
    """Caches the delayed-reference Gram matrix and per-estimate solves."""

    def __init__(self, refs: np.ndarray, filt_len: int):
        self.refs = refs  # (C, n)
        self.filt_len = filt_len
        self.n_src, self.n = refs.shape
        if np.any(np.all(refs == 0, axis=1)):
            raise ValueError("references must be non-silent")
        self.n_fft = int(2 ** np.ceil(np.log2(self.n + filt_len - 1)))
        self.ref_f = np.fft.rfft(refs, n=self.n_fft, axis=1)
        self.ridge_used = False
        self._gram_blocks = self._correlate_refs()
        order = self.n_src * filt_len
        self.gram = np.zeros((order, order))
        for i in range(self.n_src):
            for j in range(self.n_src):
                self.gram[
                    i * filt_len : (i + 1) * filt_len,
                    j * filt_len : (j + 1) * filt_len,
                ] = self._gram_blocks[i, j]

    def _correlate_refs(self):
        length = self.filt_len
        blocks = np.zeros((self.n_src, self.n_src, length, length))
        for i in range(self.n_src):
            for j in range(i, self.n_src):
                c = np.fft.irfft(
                    self.ref_f[i] * np.conj(self.ref_f[j]), n=self.n_fft
                )
                # block[t1, t2] = sum_t ref_i(t - t1) ref_j(t - t2) = c(t2 - t1)
                col = np.concatenate(([c[0]], c[-1 : -length : -1]))
                blocks[i, j] = toeplitz(col, c[:length])
                blocks[j, i] = blocks[i, j].T
        return blocks

    def _solve(self, gram, rhs):
        try:
            return solve(gram, rhs, assume_a="sym")
        except LinAlgError:
            self.ridge_used = True
            lam = 1e-10 * np.trace(gram)
            return solve(gram + lam * np.eye(len(gram)), rhs, assume_a="sym")

    def _cross(self, est, j):
        est_f = np.fft.rfft(est, n=self.n_fft)
        c = np.fft.irfft(est_f * np.conj(self.ref_f[j]), n=self.n_fft)
        return c[: self.filt_len]

    def project_all(self, est: np.ndarray) -> np.ndarray:
        """Projection of est onto the delay span of all references."""
        rhs = np.concatenate([self._cross(est, j) for j in range(self.n_src)])
        coeffs = self._solve(self.gram, rhs).reshape(self.n_src, self.filt_len)
        out = np.zeros(self.n + self.filt_len - 1)
        for j in range(self.n_src):
            out += fftconvolve(coeffs[j], self.refs[j])
        return out

    def project_one(self, est: np.ndarray, j: int) -> np.ndarray:
        """Projection of est onto the delay span of reference j alone."""
        coeffs = self._solve(self._gram_blocks[j, j], self._cross(est, j))
        return fftconvolve(coeffs, self.refs[j])


def _decompose(projector: _DelayProjector, est: np.ndarray, matched: int):
    s_target = projector.project_one(est, matched)
    proj_all = projector.project_all(est)
    est_pad = np.concatenate([est, np.zeros(projector.filt_len - 1)])
    e_interf = proj_all - s_target
    e_artif = est_pad - proj_all
    return s_target, e_interf, e_artif


def _db(num: float, den: float) -> float:
    if den == 0:
        return np.inf
    return 10.0 * np.log10(num / den)


def _scores(s_target, e_interf, e_artif):
    target_energy = np.sum(s_target**2)
    sdr = _db(target_energy, np.sum((e_interf + e_artif) ** 2))
    sir = _db(target_energy, np.sum(e_interf**2))
    sar = _db(np.sum((s_target + e_interf) ** 2), np.sum(e_artif**2))
    return sdr, sir, sar


def project_onto_delays(
    est: Waveform, refs: Sequence[Waveform], filt_len: int = DEFAULT_FILT_LEN
):
    """Decompose an estimate against references; refs[0] is the matched one.

    Returns (s_target, e_interf, e_artif) arrays of length n + filt_len - 1.
    """
    ref_arr = np.stack([r.samples for r in refs])
    if ref_arr.shape[1] != len(est):
        raise ValueError("estimate and references must share length")
    projector = _DelayProjector(ref_arr, filt_len)
    return _decompose(projector, est.samples, matched=0)


def bss_eval_sources(
    ests: Sequence[Waveform],
    refs: Sequence[Waveform],
    filt_len: int = DEFAULT_FILT_LEN,
) -> SeparationScore:
    """Score C estimates against C references with best-permutation search."""
    if len(ests) != len(refs) or not ests:
        raise ValueError("need equal, nonzero numbers of estimates and references")
    ref_arr = np.stack([r.samples for r in refs])
    est_arr = np.stack([e.samples for e in ests])
    if ref_arr.shape != est_arr.shape:
        raise ValueError("estimates and references must share length")
    if ref_arr.shape[1] < filt_len:
        raise ValueError(
            f"signals of {ref_arr.shape[1]} samples are shorter than the "
            f"{filt_len}-tap projection filter"
        )

    n_src = len(refs)
    projector = _DelayProjector(ref_arr, filt_len)

    # score every (estimate, candidate reference) pair once
    table = np.zeros((n_src, n_src, 3))
    for j in range(n_src):
        proj_all = projector.project_all(est_arr[j])
        est_pad = np.concatenate([est_arr[j], np.zeros(filt_len - 1)])
        for i in range(n_src):
            s_target = projector.project_one(est_arr[j], i)
            e_interf = proj_all - s_target
            e_artif = est_pad - proj_all
            table[j, i] = _scores(s_target, e_interf, e_artif)

    best_perm, best_sir = None, -np.inf
    for perm in itertools.permutations(range(n_src)):
        mean_sir = np.mean([table[j, perm[j], 1] for j in range(n_src)])
        if mean_sir > best_sir:
            best_perm, best_sir = perm, mean_sir

    est_for_ref = tuple(int(np.nonzero([p == i for p in best_perm])[0][0])
                        for i in range(n_src))
    sdr = np.array([table[est_for_ref[i], i, 0] for i in range(n_src)])
    sir = np.array([table[est_for_ref[i], i, 1] for i in range(n_src)])
    sar = np.array([table[est_for_ref[i], i, 2] for i in range(n_src)])
    return SeparationScore(sdr, sir, sar, est_for_ref)
