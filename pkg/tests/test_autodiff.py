"""Reverse-mode engine: primitive gradients, optimizer, checkpoints."""

import numpy as np
import pytest

import convsep.autodiff as ad
from convsep.autodiff import (
    Parameter,
    Tensor,
    adam_step,
    backward,
    batch_norm,
    conv2d,
    grad_check,
    load_checkpoint,
    matmul,
    mse_loss,
    no_grad,
    residual_add,
    save_checkpoint,
    softmax,
)


def _check(build_loss, arrays, tol=1e-6, h=1e-6, n_samples=50):
    """Wrap arrays as Parameters, run grad_check on the closure."""
    params = [Parameter(a, f"p{i}") for i, a in enumerate(arrays)]
    worst, _ = grad_check(
        lambda: build_loss(*[p.tensor for p in params]),
        params, h=h, n_samples=n_samples,
    )
    assert worst < tol, f"max rel err {worst:.3e} >= {tol:g}"


def test_add_mul_broadcast_grads():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,))
    _check(lambda x, y: ((x + y) * (x * y)).sum(), [a, b], tol=1e-6)


def test_div_pow_grads():
    rng = np.random.default_rng(1)
    a = rng.uniform(0.5, 2.0, (3, 4))
    b = rng.uniform(0.5, 2.0, (3, 4))
    _check(lambda x, y: (x / y + x**3).sum(), [a, b], tol=1e-4, h=1e-5)


def test_exp_log_sqrt_relu_grads():
    rng = np.random.default_rng(2)
    a = rng.uniform(0.5, 2.0, (4, 5))
    _check(
        lambda x: (x.exp() + x.log() + x.sqrt() + (x - 1.0).relu()).sum(),
        [a], tol=1e-4, h=1e-5,
    )


def test_reduction_and_shaping_grads():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(2, 3, 4))
    _check(
        lambda x: (x.sum(axis=1, keepdims=True) * x.mean(axis=(0, 2), keepdims=True)).sum(),
        [a], tol=1e-6,
    )
    _check(lambda x: (x.reshape(6, 4).transpose() * 2.0).sum(), [a], tol=1e-6)


def test_getitem_grad():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(5, 5))
    _check(lambda x: (x[1:4, ::2] * x[0:3, ::2]).sum(), [a], tol=1e-6)


def test_matmul_grad():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    _check(lambda x, y: (matmul(x, y) ** 2).sum(), [a, b], tol=1e-4, h=1e-5)


def test_softmax_rows_and_grad():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(5, 3))
    out = softmax(Tensor(logits), axis=1)
    assert np.allclose(out.data.sum(axis=1), 1.0)
    target = rng.uniform(size=(5, 3))
    _check(
        lambda x: mse_loss(softmax(x, axis=1), Tensor(target)),
        [logits], tol=1e-4, h=1e-5,
    )


def test_conv2d_matches_direct_computation():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 3, 6, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    df, dt = 2, 3
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), dilation=(df, dt)).data
    assert out.shape == (2, 4, 6, 7)
    xp = np.pad(x, ((0, 0), (0, 0), (df, df), (dt, dt)))
    ref = np.zeros_like(out)
    for bi in range(2):
        for co in range(4):
            for f in range(6):
                for t in range(7):
                    acc = b[co]
                    for ci in range(3):
                        for i in range(3):
                            for j in range(3):
                                acc += w[co, ci, i, j] * xp[bi, ci, f + i * df, t + j * dt]
                    ref[bi, co, f, t] = acc
    assert np.max(np.abs(out - ref)) < 1e-10


def test_conv2d_grads():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(1, 2, 4, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    _check(
        lambda xx, ww, bb: (conv2d(xx, ww, bb, dilation=(1, 2)) ** 2).sum(),
        [x, w, b], tol=1e-4, h=1e-5,
    )


def test_conv2d_validation():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ValueError):
        conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 2, 3, 3))))
    with pytest.raises(ValueError):
        conv2d(x, Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ValueError):
        conv2d(x, Tensor(np.zeros((1, 2, 2, 2))))
    with pytest.raises(ValueError):
        conv2d(x, Tensor(np.zeros((1, 2, 3, 3))), dilation=(0, 1))


def test_residual_add_requires_same_shape():
    with pytest.raises(ValueError):
        residual_add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_batch_norm_train_normalizes_and_updates_running():
    rng = np.random.default_rng(9)
    x = rng.normal(2.0, 3.0, (4, 2, 5, 6))
    rm = np.zeros(2)
    rv = np.ones(2)
    out = batch_norm(
        Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, mode="train"
    )
    assert np.allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    assert np.allclose(out.data.std(axis=(0, 2, 3)), 1.0, atol=1e-3)
    expected_rm = 0.01 * x.mean(axis=(0, 2, 3))
    assert np.allclose(rm, expected_rm)


def test_batch_norm_eval_uses_running_stats():
    x = np.full((1, 1, 2, 2), 5.0)
    rm = np.array([5.0])
    rv = np.array([4.0])
    out = batch_norm(
        Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, mode="eval"
    )
    assert np.allclose(out.data, 0.0)
    assert rm[0] == 5.0 and rv[0] == 4.0  # eval must not mutate


def test_batch_norm_grads():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(2, 3, 4, 4))
    gamma = rng.uniform(0.5, 1.5, 3)
    beta = rng.normal(size=3)
    rm, rv = np.zeros(3), np.ones(3)
    # weight the output so the loss is not nearly invariant to x (a plain
    # sum of squares of normalized values has vanishing x-gradients)
    w = Tensor(rng.normal(size=(2, 3, 4, 4)))

    def loss(xx, gg, bb):
        out = batch_norm(xx, gg, bb, rm.copy(), rv.copy(), mode="train")
        return ((out * w) ** 3).sum()

    _check(loss, [x, gamma, beta], tol=1e-4, h=1e-5)


def test_fanout_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x + x * 2.0
    backward(y.sum())
    assert x.grad[0] == pytest.approx(2 * 3.0 + 2.0)


def test_no_grad_blocks_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    assert y._backward is None


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * 2.0)


def test_adam_single_step_matches_formula():
    p = Parameter(np.array([1.0]), "w")
    loss = (p.tensor * 3.0).sum()
    backward(loss)
    adam_step([p], lr=0.1, step=1)
    # bias-corrected first step moves by ~lr * sign(grad)
    expected = 1.0 - 0.1 * 3.0 / (3.0 + 1e-8)
    assert p.data[0] == pytest.approx(expected, rel=1e-6)
    assert p.grad is None


def test_adam_requires_grad_and_valid_step():
    p = Parameter(np.ones(2), "w")
    with pytest.raises(ValueError):
        adam_step([p], 0.1, 1)
    p.tensor.grad = np.ones(2)
    with pytest.raises(ValueError):
        adam_step([p], 0.1, 0)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    params = [Parameter(rng.normal(size=(3, 2)), "a"), Parameter(rng.normal(size=4), "b")]
    params[0].adam_m = rng.normal(size=(3, 2))
    params[0].adam_v = np.abs(rng.normal(size=(3, 2)))
    buffers = {"running": rng.normal(size=5)}
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, params, buffers, step=42)
    loaded_params, loaded_buffers, step = load_checkpoint(path)
    assert step == 42
    assert np.array_equal(loaded_params["a"][0], params[0].data)
    assert np.array_equal(loaded_params["a"][1], params[0].adam_m)
    assert np.array_equal(loaded_params["a"][2], params[0].adam_v)
    assert np.array_equal(loaded_buffers["running"], buffers["running"])


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_grad_check_reports_per_parameter():
    p = Parameter(np.array([2.0, 3.0]), "w")
    worst, report = grad_check(lambda: (p.tensor**2).sum(), [p], h=1e-6)
    assert set(report) == {"w"}
    assert worst < 1e-6
