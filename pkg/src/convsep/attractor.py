"""Attractor-based masking: labels, thresholding, centroids, masks, loss.

Training path: the dominant source per time-frequency bin gives one-hot
labels; bins with negligible power are dropped by a relative threshold on
the log-magnitude features; attractors are the per-source means of member
embeddings; inner products with the attractors plus a softmax give the
mask, which multiplies the mixture magnitude to form source estimates.

At inference the labels are unavailable, so attractors come from K-means
over the above-threshold embeddings and the mask is hardened to a per-bin
argmax.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "LabelTensor",
    "ThresholdMask",
    "AttractorSet",
    "DegenerateAttractorError",
    "ClusteringError",
    "ideal_binary_mask",
    "threshold",
    "masked_labels",
    "train_attractors",
    "kmeans",
    "kmeans_attractors",
    "compute_mask",
    "estimate_sources",
    "training_loss",
    "separation_loss",
]


class DegenerateAttractorError(ValueError):
    """A source has no active bins; its attractor is undefined."""


class ClusteringError(ValueError):
    """Not enough above-threshold embeddings to cluster."""


@dataclass(frozen=True)
class LabelTensor:
    """{0,1} grid of shape (F, T, C); at most one active source per bin."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 3:
            raise ValueError(f"labels must be (F, T, C), got {values.shape}")
        if np.any(values.sum(axis=2) > 1):
            raise ValueError("more than one active source at a bin")


@dataclass(frozen=True)
class ThresholdMask:
    """{0,1} grid of shape (F, T) of bins that pass the power criterion."""

    values: np.ndarray
    alpha: float


@dataclass(frozen=True)
class AttractorSet:
    """C cluster centers in embedding space, with member counts."""

    values: np.ndarray  # (C, K)
    counts: np.ndarray  # (C,)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("attractors must be finite")


def ideal_binary_mask(source_mags: Sequence[np.ndarray]) -> LabelTensor:
    """One-hot argmax over sources per bin; ties go to the lowest index."""
    shapes = {np.asarray(s).shape for s in source_mags}
    if len(shapes) != 1:
        raise ValueError(f"sources disagree on geometry: {shapes}")
    stacked = np.stack([np.asarray(s) for s in source_mags], axis=2)
    winner = np.argmax(stacked, axis=2)
    labels = np.zeros_like(stacked)
    f_idx, t_idx = np.meshgrid(
        np.arange(stacked.shape[0]), np.arange(stacked.shape[1]), indexing="ij"
    )
    labels[f_idx, t_idx, winner] = 1.0
    return LabelTensor(labels)


def threshold(feature_values: np.ndarray, alpha: float) -> ThresholdMask:
    """Keep bins whose shifted log-magnitude reaches alpha times the peak.

    The features are shifted by their minimum so the criterion compares
    nonnegative values; a bin is kept iff (X - min) >= alpha * max(X - min).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    x = np.asarray(feature_values, dtype=np.float64)
    shifted = x - x.min()
    peak = shifted.max()
    if peak == 0.0:
        warnings.warn("constant feature grid; keeping all bins")
        return ThresholdMask(np.ones_like(x), alpha)
    return ThresholdMask((shifted >= alpha * peak).astype(np.float64), alpha)


def masked_labels(raw: LabelTensor, h: ThresholdMask) -> LabelTensor:
    """Zero out the labels of below-threshold bins (elementwise product)."""
    if raw.values.shape[:2] != h.values.shape:
        raise ValueError(
            f"shape mismatch: labels {raw.values.shape} vs mask {h.values.shape}"
        )
    return LabelTensor(raw.values * h.values[:, :, None])


def train_attractors(embeddings: np.ndarray, labels: LabelTensor) -> AttractorSet:
    """Per-source mean of the member embeddings (training-time attractors).

    ``embeddings`` is (F, T, K); raises if any source has no active bin.
    """
    v = np.asarray(embeddings, dtype=np.float64)
    y = labels.values
    counts = y.sum(axis=(0, 1))
    if np.any(counts == 0):
        empty = np.nonzero(counts == 0)[0].tolist()
        raise DegenerateAttractorError(f"sources {empty} have no active bins")
    centers = np.einsum("ftk,ftc->ck", v, y) / counts[:, None]
    return AttractorSet(centers, counts)


def _kmeans_pp_init(points: np.ndarray, k: int, rng) -> np.ndarray:
    centers = [points[rng.integers(len(points))]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((points - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total == 0:
            centers.append(points[rng.integers(len(points))])
            continue
        centers.append(points[rng.choice(len(points), p=d2 / total)])
    return np.array(centers)


def _lloyd(points, centers, max_iters):
    """Lloyd iterations to an assignment fixpoint; returns
    (centers, assignment, inertia_history)."""
    assign = None
    history = []
    for _ in range(max_iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(points)), new_assign].sum()))
        for c in range(len(centers)):
            members = points[new_assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
            else:
                # reseed an empty cluster at the farthest point
                far = np.argmax(d2.min(axis=1))
                centers[c] = points[far]
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2, axis=1)
    history.append(float(d2[np.arange(len(points)), assign].sum()))
    return centers, assign, history


def kmeans(points: np.ndarray, k: int, seed=0, restarts: int = 10, max_iters: int = 100):
    """K-means++ with restarts; returns (centers, assignment, inertia_history)
    of the best restart (ties broken by restart index)."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < k:
        raise ClusteringError(f"need at least {k} points, got {len(points)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centers = _kmeans_pp_init(points, k, rng)
        centers, assign, history = _lloyd(points, centers.copy(), max_iters)
        if best is None or history[-1] < best[2][-1]:
            best = (centers, assign, history)
    return best


def kmeans_attractors(
    embeddings: np.ndarray,
    h: ThresholdMask,
    n_sources: int = 2,
    seed=0,
    restarts: int = 10,
    max_iters: int = 100,
) -> AttractorSet:
    """Cluster above-threshold embeddings; centroids are renormalized to the
    unit sphere to match the embedding geometry."""
    v = np.asarray(embeddings, dtype=np.float64)
    keep = h.values.astype(bool)
    points = v[keep]
    if len(points) < n_sources:
        raise ClusteringError(
            f"only {len(points)} above-threshold embeddings for "
            f"{n_sources} clusters"
        )
    centers, assign, _ = kmeans(points, n_sources, seed, restarts, max_iters)
    norms = np.linalg.norm(centers, axis=1, keepdims=True)
    centers = centers / np.maximum(norms, 1e-12)
    counts = np.bincount(assign, minlength=n_sources).astype(np.float64)
    return AttractorSet(centers, counts)


def compute_mask(
    embeddings: np.ndarray, attractors: AttractorSet, mode: str = "softmax"
) -> np.ndarray:
    """Mask (F, T, C) from embedding/attractor inner products.

    softmax mode normalizes over sources (training); hard mode one-hot
    encodes the argmax (evaluation).
    """
    logits = np.asarray(embeddings) @ attractors.values.T
    if mode == "softmax":
        z = np.exp(logits - logits.max(axis=2, keepdims=True))
        return z / z.sum(axis=2, keepdims=True)
    if mode == "hard":
        winner = np.argmax(logits, axis=2)
        mask = np.zeros_like(logits)
        f_idx, t_idx = np.meshgrid(
            np.arange(logits.shape[0]), np.arange(logits.shape[1]), indexing="ij"
        )
        mask[f_idx, t_idx, winner] = 1.0
        return mask
    raise ValueError(f"mode must be 'softmax' or 'hard', got {mode!r}")


def estimate_sources(mask: np.ndarray, mixture_mag: np.ndarray) -> np.ndarray:
    """Per-source magnitude estimates: mask times linear mixture magnitude."""
    mask = np.asarray(mask)
    mixture_mag = np.asarray(mixture_mag)
    if mask.shape[:2] != mixture_mag.shape:
        raise ValueError(
            f"shape mismatch: mask {mask.shape} vs mixture {mixture_mag.shape}"
        )
    return mask * mixture_mag[:, :, None]


def training_loss(true_mags: np.ndarray, est_mags: np.ndarray) -> float:
    """Summed squared Frobenius distance, minimized over the source-to-
    estimate assignment.  Inputs are (F, T, C)."""
    true_mags = np.asarray(true_mags)
    est_mags = np.asarray(est_mags)
    if true_mags.shape != est_mags.shape:
        raise ValueError("true and estimated spectrograms must share shape")
    n_src = true_mags.shape[2]
    best = np.inf
    for perm in itertools.permutations(range(n_src)):
        loss = float(np.sum((true_mags[:, :, list(perm)] - est_mags) ** 2))
        best = min(best, loss)
    return best


def separation_loss(
    embeddings: Tensor,
    labels: LabelTensor,
    mixture_mag: np.ndarray,
    true_mags: np.ndarray,
) -> Tensor:
    """Differentiable loss for one example.

    ``embeddings`` is a (K, F, T) tensor from the network; labels select the
    attractor members; the softmax mask scales the linear mixture magnitude
    and the summed squared error to the true source magnitudes is minimized
    over the two source-to-attractor assignments.
    """
    k, n_f, n_t = embeddings.shape
    y = labels.values.reshape(n_f * n_t, -1)
    counts = y.sum(axis=0)
    if np.any(counts == 0):
        raise DegenerateAttractorError("a source has no active bins")

    v = embeddings.reshape(k, n_f * n_t).transpose()  # (FT, K)
    pooling = Tensor((y / counts[None, :]).T)  # (C, FT)
    attractors = ad.matmul(pooling, v)  # (C, K)
    logits = ad.matmul(v, attractors.transpose())  # (FT, C)
    mask = ad.softmax(logits, axis=1)
    est = mask * Tensor(mixture_mag.reshape(-1, 1))

    s = true_mags.reshape(n_f * n_t, -1)
    losses = [
        ad.mse_loss(est, Tensor(s[:, list(perm)]))
        for perm in itertools.permutations(range(s.shape[1]))
    ]
    best = losses[0]
    for cand in losses[1:]:
        if cand.item() < best.item():
            best = cand
    return best
