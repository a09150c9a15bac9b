"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` records the operations that produced it; :func:`backward`
replays them in reverse topological order, summing gradients where a value
fans out to several consumers.  Only the primitives the separation network
needs are provided: elementwise arithmetic, reductions, dilated 2-D
convolution, batch normalization, softmax, and matrix products.

Also here: :class:`Parameter` with Adam state, the Adam update itself,
finite-difference gradient checking, and a flat binary checkpoint format.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "no_grad",
    "backward",
    "conv2d",
    "batch_norm",
    "residual_add",
    "softmax",
    "mse_loss",
    "matmul",
    "adam_step",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
]

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array plus the backward rule that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction helpers --------------------------------------

    @staticmethod
    def _result(data, parents, backward_fn):
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward_fn
        return out

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- elementwise arithmetic (numpy broadcasting) ----------------------

    def __add__(self, other):
        other = _as_tensor(other)
        out_data = self.data + other.data

        def bwd(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._result(out_data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        out_data = self.data * other.data

        def bwd(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._result(out_data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        out_data = self.data / other.data

        def bwd(g):
            self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            other._accumulate(
                _unbroadcast(-g * self.data / other.data**2, other.data.shape)
            )

        return Tensor._result(out_data, (self, other), bwd)

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data**p

        def bwd(g):
            self._accumulate(g * p * self.data ** (p - 1))

        return Tensor._result(out_data, (self,), bwd)

    # -- unary / shaping ---------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def bwd(g):
            self._accumulate(g * out_data)

        return Tensor._result(out_data, (self,), bwd)

    def log(self):
        def bwd(g):
            self._accumulate(g / self.data)

        return Tensor._result(np.log(self.data), (self,), bwd)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def bwd(g):
            self._accumulate(g * 0.5 / out_data)

        return Tensor._result(out_data, (self,), bwd)

    def relu(self):
        mask = self.data > 0

        def bwd(g):
            self._accumulate(g * mask)

        return Tensor._result(self.data * mask, (self,), bwd)

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape))

        return Tensor._result(out_data, (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.data.shape

        def bwd(g):
            self._accumulate(g.reshape(orig))

        return Tensor._result(self.data.reshape(shape), (self,), bwd)

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)

        def bwd(g):
            self._accumulate(g.transpose(inv))

        return Tensor._result(self.data.transpose(axes), (self,), bwd)

    def __getitem__(self, key):
        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            self._accumulate(full)

        return Tensor._result(self.data[key], (self,), bwd)

    def detach(self):
        return Tensor(self.data.copy())

    def item(self):
        return float(self.data)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# -- composite and structured operations ----------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with gradients to both factors."""
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data @ b.data

    def bwd(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return Tensor._result(out_data, (a, b), bwd)


def residual_add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum of equal-shape tensors (skip connection)."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x + y


def softmax(x: Tensor, axis: int) -> Tensor:
    """Numerically stable softmax along ``axis``.

    The max subtraction is treated as a constant shift, which is exact:
    softmax is invariant to shifts along the normalized axis.
    """
    x = _as_tensor(x)
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    z = (x - shift).exp()
    return z / z.sum(axis=axis, keepdims=True)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Summed squared error (squared Frobenius norm of the difference)."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).sum()


def conv2d(x: Tensor, weight: Tensor, bias=None, dilation=(1, 1)) -> Tensor:
    """Dilated 2-D convolution with same-padding.

    ``x`` is (B, Cin, F, T), ``weight`` is (Cout, Cin, kh, kw) with odd kernel
    sides, ``bias`` is (Cout,).  Each spatial axis is zero-padded by
    dilation * (kernel // 2) per side, so the spatial shape is preserved for
    every dilation >= 1.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.data.ndim != 4:
        raise ValueError(f"input must be (B, Cin, F, T), got {x.shape}")
    n_out, n_in, kh, kw = weight.shape
    if x.shape[1] != n_in:
        raise ValueError(
            f"input has {x.shape[1]} channels but kernel expects {n_in}"
        )
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel sides must be odd for same-padding")
    df, dt = dilation
    if df < 1 or dt < 1:
        raise ValueError("dilations must be >= 1")

    batch, _, n_f, n_t = x.shape
    pf, pt = df * (kh // 2), dt * (kw // 2)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pf, pf), (pt, pt)))

    flat = n_f * n_t
    out = np.zeros((batch, n_out, flat))
    slices = []
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i * df : i * df + n_f, j * dt : j * dt + n_t]
            xs = np.ascontiguousarray(xs).reshape(batch, n_in, flat)
            slices.append((i, j, xs))
            out += weight.data[:, :, i, j] @ xs
    out = out.reshape(batch, n_out, n_f, n_t)
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data.reshape(1, n_out, 1, 1)
        parents = (x, weight, bias)
    else:
        parents = (x, weight)

    def bwd(g):
        g2 = g.reshape(batch, n_out, flat)
        if bias is not None:
            bias._accumulate(g2.sum(axis=(0, 2)))
        gw = np.zeros_like(weight.data)
        gxp = np.zeros_like(xp)
        for i, j, xs in slices:
            gw[:, :, i, j] = np.matmul(g2, xs.transpose(0, 2, 1)).sum(axis=0)
            gx = (weight.data[:, :, i, j].T @ g2).reshape(batch, n_in, n_f, n_t)
            gxp[:, :, i * df : i * df + n_f, j * dt : j * dt + n_t] += gx
        weight._accumulate(gw)
        if pf or pt:
            gx_crop = gxp[:, :, pf : pf + n_f, pt : pt + n_t]
        else:
            gx_crop = gxp
        x._accumulate(gx_crop)

    return Tensor._result(out, parents, bwd)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-5,
    mode: str = "train",
    momentum: float = 0.99,
) -> Tensor:
    """Per-channel batch normalization over the (batch, F, T) extent.

    In train mode the batch statistics normalize and the running statistics
    are updated in place with the given momentum; in eval mode the running
    statistics normalize and nothing is mutated.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    n_chan = x.shape[1]
    cshape = (1, n_chan, 1, 1)
    axes = (0, 2, 3)
    if mode == "train":
        mean = x.mean(axis=axes, keepdims=True)
        var = ((x - mean) ** 2).mean(axis=axes, keepdims=True)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean.data.reshape(n_chan)
        running_var *= momentum
        running_var += (1.0 - momentum) * var.data.reshape(n_chan)
    elif mode == "eval":
        mean = Tensor(running_mean.reshape(cshape))
        var = Tensor(running_var.reshape(cshape))
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    xhat = (x - mean) / (var + eps).sqrt()
    return xhat * gamma.reshape(cshape) + beta.reshape(cshape)


# -- backward pass ---------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable tensor.

    The recorded graph is traversed once in reverse topological order;
    fan-out sums contributions.
    """
    if loss.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")

    tape = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            tape.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(tape):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- parameters, optimizer, checkpoints ------------------------------------


class Parameter:
    """A named trainable tensor with Adam moment buffers."""

    def __init__(self, data, name: str):
        self.tensor = Tensor(data, requires_grad=True)
        self.name = name
        self.adam_m = np.zeros_like(self.tensor.data)
        self.adam_v = np.zeros_like(self.tensor.data)

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = None


def adam_step(
    params,
    lr: float,
    step: int,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update; ``step`` is 1-based.  Gradients are
    cleared afterwards."""
    if step < 1:
        raise ValueError("step must be >= 1")
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name!r} has no gradient")
        g = p.grad
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1**step)
        v_hat = p.adam_v / (1.0 - beta2**step)
        p.tensor.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.zero_grad()


def grad_check(fn, params, h: float = 1e-5, n_samples: int = 50, seed: int = 0):
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` rebuilds and returns the scalar loss Tensor from the current
    parameter values.  For each parameter, up to ``n_samples`` coordinates
    are sampled.  Returns the max relative error and a per-parameter report.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.zero_grad()
    loss = fn()
    backward(loss)
    analytic = {p.name: np.array(p.grad) for p in params}
    for p in params:
        p.zero_grad()

    report = {}
    worst = 0.0
    for p in params:
        flat = p.tensor.data.reshape(-1)
        n = flat.size
        coords = (
            np.arange(n) if n <= n_samples
            else rng.choice(n, size=n_samples, replace=False)
        )
        errs = []
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            lp = fn().item()
            flat[c] = orig - h
            lm = fn().item()
            flat[c] = orig
            numeric = (lp - lm) / (2.0 * h)
            ana = analytic[p.name].reshape(-1)[c]
            scale = max(abs(numeric), abs(ana), 1e-8)
            errs.append(abs(numeric - ana) / scale if scale > 1e-8 else 0.0)
        report[p.name] = max(errs) if errs else 0.0
        worst = max(worst, report[p.name])
    return worst, report


_CKPT_MAGIC = b"CSEP"
_CKPT_VERSION = 1


def save_checkpoint(path, params, buffers=None, step: int = 0) -> None:
    """Flat little-endian binary: header, then one record per array.

    Record: name length/bytes, kind (0 = parameter, 1 = buffer), rank, dims,
    float64 values; parameters additionally carry their Adam moments so a
    resumed run continues bit-identically.
    """
    buffers = buffers or {}
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IQI", _CKPT_VERSION, step, len(params) + len(buffers)))
        for p in params:
            _write_record(fh, p.name, 0, p.tensor.data, p.adam_m, p.adam_v)
        for name, arr in buffers.items():
            _write_record(fh, name, 1, np.asarray(arr, dtype=np.float64))


def _write_record(fh, name, kind, values, m=None, v=None):
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<BI", kind, values.ndim))
    fh.write(struct.pack(f"<{values.ndim}Q", *values.shape))
    fh.write(values.astype("<f8").tobytes())
    if kind == 0:
        fh.write(m.astype("<f8").tobytes())
        fh.write(v.astype("<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint.  Returns (params, buffers, step) where params maps
    name -> (values, adam_m, adam_v) and buffers maps name -> values."""
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, step, count = struct.unpack("<IQI", fh.read(16))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        params, buffers = {}, {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            kind, rank = struct.unpack("<BI", fh.read(5))
            shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
            n = int(np.prod(shape)) if rank else 1
            values = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
            if kind == 0:
                m = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
                v = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
                params[name] = (values, m, v)
            else:
                buffers[name] = values
    return params, buffers, step
