"""Labels, thresholding, attractors, masks, and the separation loss."""

import numpy as np
import pytest

import convsep.autodiff as ad
from convsep.attractor import (
    AttractorSet,
    ClusteringError,
    DegenerateAttractorError,
    LabelTensor,
    ThresholdMask,
    compute_mask,
    estimate_sources,
    ideal_binary_mask,
    kmeans,
    kmeans_attractors,
    masked_labels,
    separation_loss,
    threshold,
    train_attractors,
    training_loss,
)
from convsep.autodiff import Parameter, Tensor


def test_ibm_is_one_hot_argmax():
    a = np.array([[1.0, 3.0], [2.0, 0.5]])
    b = np.array([[2.0, 1.0], [1.0, 0.5]])
    labels = ideal_binary_mask([a, b]).values
    assert labels.shape == (2, 2, 2)
    assert np.array_equal(labels[:, :, 0], [[0, 1], [1, 1]])  # ties -> source 0
    assert np.all(labels.sum(axis=2) == 1)


def test_ibm_shape_mismatch():
    with pytest.raises(ValueError):
        ideal_binary_mask([np.zeros((2, 2)), np.zeros((2, 3))])


def test_label_tensor_invariants():
    with pytest.raises(ValueError):
        LabelTensor(np.ones((2, 2)))
    with pytest.raises(ValueError):
        LabelTensor(np.ones((2, 2, 2)))  # two active sources per bin


def test_threshold_keeps_loud_bins():
    x = np.array([[0.0, 5.0], [10.0, 6.0]])
    h = threshold(x, 0.6).values
    assert np.array_equal(h, [[0, 0], [1, 1]])
    assert threshold(x, 0.6).alpha == 0.6


def test_threshold_shift_invariance():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 7))
    assert np.array_equal(threshold(x, 0.6).values, threshold(x + 100.0, 0.6).values)


def test_threshold_alpha_range_and_constant_grid():
    with pytest.raises(ValueError):
        threshold(np.zeros((2, 2)), 0.0)
    with pytest.raises(ValueError):
        threshold(np.zeros((2, 2)), 1.0)
    with pytest.warns(UserWarning):
        h = threshold(np.full((3, 3), 2.0), 0.5)
    assert np.all(h.values == 1)


def test_masked_labels_zero_out():
    labels = ideal_binary_mask([np.ones((2, 2)), np.zeros((2, 2))])
    h = ThresholdMask(np.array([[1.0, 0.0], [0.0, 1.0]]), 0.6)
    masked = masked_labels(labels, h)
    assert np.array_equal(masked.values.sum(axis=2), h.values)
    with pytest.raises(ValueError):
        masked_labels(labels, ThresholdMask(np.ones((3, 3)), 0.6))


def test_train_attractors_are_member_means():
    v = np.zeros((2, 2, 3))
    v[0, 0] = [1, 0, 0]
    v[0, 1] = [0, 1, 0]
    v[1, 0] = [0, 0, 1]
    labels = np.zeros((2, 2, 2))
    labels[0, 0, 0] = labels[0, 1, 0] = 1
    labels[1, 0, 1] = 1
    att = train_attractors(v, LabelTensor(labels))
    assert np.allclose(att.values[0], [0.5, 0.5, 0.0])
    assert np.allclose(att.values[1], [0.0, 0.0, 1.0])
    assert np.array_equal(att.counts, [2, 1])


def test_train_attractors_degenerate():
    labels = np.zeros((2, 2, 2))
    labels[:, :, 0] = np.eye(2)
    with pytest.raises(DegenerateAttractorError):
        train_attractors(np.zeros((2, 2, 3)), LabelTensor(labels))


def test_attractor_set_finite():
    with pytest.raises(ValueError):
        AttractorSet(np.array([[np.inf, 0.0]]), np.array([1.0]))


def test_kmeans_recovers_separated_clusters():
    rng = np.random.default_rng(1)
    pts = np.concatenate([
        rng.normal(0.0, 0.05, (40, 2)),
        rng.normal(5.0, 0.05, (40, 2)),
    ])
    centers, assign, history = kmeans(pts, 2, seed=0, restarts=3)
    assert sorted(np.round(centers.mean(axis=1)).astype(int)) == [0, 5]
    assert len(set(assign[:40])) == 1 and len(set(assign[40:])) == 1
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))


def test_kmeans_too_few_points():
    with pytest.raises(ClusteringError):
        kmeans(np.zeros((1, 2)), 2)


def test_kmeans_attractors_on_unit_sphere():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(5, 6, 3))
    v /= np.linalg.norm(v, axis=2, keepdims=True)
    h = ThresholdMask(np.ones((5, 6)), 0.6)
    att = kmeans_attractors(v, h, n_sources=2, seed=0, restarts=2)
    assert np.allclose(np.linalg.norm(att.values, axis=1), 1.0)
    assert att.counts.sum() == 30


def test_kmeans_attractors_needs_enough_bins():
    v = np.zeros((2, 2, 3))
    h = ThresholdMask(np.zeros((2, 2)), 0.6)
    with pytest.raises(ClusteringError):
        kmeans_attractors(v, h, n_sources=2)


def test_compute_mask_modes():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(4, 5, 3))
    att = AttractorSet(rng.normal(size=(2, 3)), np.array([1.0, 1.0]))
    soft = compute_mask(v, att, mode="softmax")
    hard = compute_mask(v, att, mode="hard")
    assert np.allclose(soft.sum(axis=2), 1.0)
    assert np.allclose(hard.sum(axis=2), 1.0)
    assert set(np.unique(hard)) <= {0.0, 1.0}
    assert np.array_equal(np.argmax(soft, axis=2), np.argmax(hard, axis=2))
    with pytest.raises(ValueError):
        compute_mask(v, att, mode="sigmoid")


def test_estimate_sources_scales_mixture():
    mask = np.zeros((2, 2, 2))
    mask[:, :, 0] = 0.25
    mask[:, :, 1] = 0.75
    mix = np.full((2, 2), 4.0)
    est = estimate_sources(mask, mix)
    assert np.allclose(est[:, :, 0], 1.0)
    assert np.allclose(est[:, :, 1], 3.0)
    with pytest.raises(ValueError):
        estimate_sources(mask, np.zeros((3, 3)))


def test_training_loss_permutation_invariant():
    rng = np.random.default_rng(4)
    true = rng.uniform(size=(3, 4, 2))
    swapped = true[:, :, ::-1]
    assert training_loss(true, true) == 0.0
    assert training_loss(true, swapped) == pytest.approx(0.0)
    est = rng.uniform(size=(3, 4, 2))
    assert training_loss(true, est) == training_loss(swapped, est)
    with pytest.raises(ValueError):
        training_loss(true, np.zeros((3, 4, 3)))


def test_separation_loss_matches_numpy_recomputation():
    rng = np.random.default_rng(5)
    k, n_f, n_t = 3, 4, 5
    v = rng.normal(size=(k, n_f, n_t))
    v /= np.sqrt((v**2).sum(axis=0, keepdims=True))
    raw = rng.integers(0, 2, size=(n_f, n_t))
    labels = np.stack([raw, 1 - raw], axis=2).astype(float)
    mix = np.abs(rng.normal(size=(n_f, n_t)))
    src = np.abs(rng.normal(size=(n_f, n_t, 2)))

    loss = separation_loss(Tensor(v), LabelTensor(labels), mix, src)

    att = train_attractors(v.transpose(1, 2, 0), LabelTensor(labels))
    mask = compute_mask(v.transpose(1, 2, 0), att, mode="softmax")
    est = estimate_sources(mask, mix)
    assert loss.item() == pytest.approx(training_loss(src, est), rel=1e-12)


def test_separation_loss_degenerate_labels():
    labels = np.zeros((2, 2, 2))
    labels[:, :, 0] = 1.0
    with pytest.raises(DegenerateAttractorError):
        separation_loss(Tensor(np.zeros((3, 2, 2))), LabelTensor(labels),
                        np.zeros((2, 2)), np.zeros((2, 2, 2)))


def test_separation_loss_gradient():
    rng = np.random.default_rng(6)
    k, n_f, n_t = 2, 3, 4
    raw = rng.integers(0, 2, size=(n_f, n_t))
    labels = LabelTensor(np.stack([raw, 1 - raw], axis=2).astype(float))
    mix = np.abs(rng.normal(size=(n_f, n_t)))
    src = np.abs(rng.normal(size=(n_f, n_t, 2)))
    p = Parameter(rng.normal(size=(k, n_f, n_t)), "v")
    worst, _ = ad.grad_check(
        lambda: separation_loss(p.tensor, labels, mix, src), [p],
        h=1e-6, n_samples=24,
    )
    assert worst < 1e-4
