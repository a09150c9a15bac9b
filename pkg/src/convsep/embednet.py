"""The dilated-convolution embedding network.

A stack of 3x3 dilated conv layers (dilations doubling within each stack)
with batch normalization and ReLU on all but the last layer, residual
connections on every other layer, and a linear head projecting to the
embedding dimension.  Per-bin outputs are L2-normalized to the unit sphere.

Because the network is purely convolutional it has a fixed-lag response:
the output for frame t depends only on frames [t - lag, t + lag], which
:class:`StreamingEncoder` exploits to emit embeddings online.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .dsp import FeatureMatrix

__all__ = [
    "LayerSpec",
    "NetworkConfig",
    "ReceptiveField",
    "Network",
    "StreamingEncoder",
    "SequencingError",
    "receptive_field",
]

NORM_GUARD = 1e-12


class SequencingError(RuntimeError):
    """Streaming chunks arrived out of order."""


@dataclass(frozen=True)
class LayerSpec:
    kernel: tuple[int, int]
    dilation: tuple[int, int]
    channels: int
    residual: bool
    batch_norm: bool = True
    activation: bool = True


@dataclass(frozen=True)
class NetworkConfig:
    """Layer list plus embedding dimension; input is a single channel."""

    layers: tuple[LayerSpec, ...]
    embedding_dim: int
    in_channels: int = 1

    @classmethod
    def default(cls, embedding_dim: int = 20) -> "NetworkConfig":
        """The 13-layer, 128-channel architecture: two stacks of dilations
        1..32 doubling each layer, then a dilation-1 linear embedding head.
        Residual connections sit on the even layers."""
        dilations = [1, 2, 4, 8, 16, 32] * 2 + [1]
        layers = []
        for i, d in enumerate(dilations):
            last = i == len(dilations) - 1
            layers.append(
                LayerSpec(
                    kernel=(3, 3),
                    dilation=(d, d),
                    channels=embedding_dim if last else 128,
                    residual=(i % 2 == 1) and not last,
                    batch_norm=not last,
                    activation=not last,
                )
            )
        return cls(tuple(layers), embedding_dim)

    @classmethod
    def small(
        cls,
        embedding_dim: int = 8,
        channels: int = 16,
        dilations=(1, 2, 4),
    ) -> "NetworkConfig":
        """A reduced architecture for tests and desk-scale training."""
        layers = []
        for i, d in enumerate(dilations):
            layers.append(
                LayerSpec(
                    kernel=(3, 3),
                    dilation=(d, d),
                    channels=channels,
                    residual=(i % 2 == 1),
                )
            )
        layers.append(
            LayerSpec(
                kernel=(3, 3),
                dilation=(1, 1),
                channels=embedding_dim,
                residual=False,
                batch_norm=False,
                activation=False,
            )
        )
        return cls(tuple(layers), embedding_dim)

    @classmethod
    def fixed_lag_toy(cls) -> "NetworkConfig":
        """Three kernel-width-2 layers with dilations 1, 2, 4: the toy
        configuration whose fixed lag is 4 frames."""
        layers = tuple(
            LayerSpec(kernel=(1, 2), dilation=(1, d), channels=1, residual=False)
            for d in (1, 2, 4)
        )
        return cls(layers, 1)

    def validate(self) -> None:
        prev = self.in_channels
        for i, layer in enumerate(self.layers):
            if layer.residual and layer.channels != prev:
                raise ValueError(
                    f"layer {i + 1} is residual but maps {prev} -> "
                    f"{layer.channels} channels"
                )
            prev = layer.channels
        if self.layers[-1].channels != self.embedding_dim:
            raise ValueError("final layer channels must equal embedding_dim")

    # -- key=value text serialization -------------------------------------

    def to_text(self) -> str:
        lines = [
            f"in_channels={self.in_channels}",
            f"embedding_dim={self.embedding_dim}",
        ]
        for i, s in enumerate(self.layers):
            lines.append(
                f"layer{i}={s.kernel[0]},{s.kernel[1]},{s.dilation[0]},"
                f"{s.dilation[1]},{s.channels},{int(s.residual)},"
                f"{int(s.batch_norm)},{int(s.activation)}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkConfig":
        fields = {}
        layers = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if key.startswith("layer"):
                idx = int(key[5:])
                kh, kw, df, dt, ch, res, bn, act = (int(v) for v in value.split(","))
                layers[idx] = LayerSpec(
                    (kh, kw), (df, dt), ch, bool(res), bool(bn), bool(act)
                )
            else:
                fields[key] = int(value)
        ordered = tuple(layers[i] for i in sorted(layers))
        return cls(ordered, fields["embedding_dim"], fields.get("in_channels", 1))


class ReceptiveField(NamedTuple):
    rf_time: int
    lag: int
    rf_freq: int


def receptive_field(config: NetworkConfig) -> ReceptiveField:
    """Receptive-field extent along each axis and the fixed lag.

    Each layer widens the field by (kernel - 1) * dilation; the lag is the
    number of future frames needed before the current frame's output is
    final, i.e. half the temporal extent.
    """
    rf_time = 1 + sum((s.kernel[1] - 1) * s.dilation[1] for s in config.layers)
    rf_freq = 1 + sum((s.kernel[0] - 1) * s.dilation[0] for s in config.layers)
    return ReceptiveField(rf_time=rf_time, lag=rf_time // 2, rf_freq=rf_freq)


class Network:
    """Built network: parameters, batch-norm running stats, forward passes."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.params: list[Parameter] = []
        self.buffers: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        prev = config.in_channels
        for i, layer in enumerate(config.layers):
            kh, kw = layer.kernel
            fan_in = prev * kh * kw
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (layer.channels, prev, kh, kw))
            self.params.append(Parameter(w, f"layer{i}.weight"))
            self.params.append(Parameter(np.zeros(layer.channels), f"layer{i}.bias"))
            if layer.batch_norm:
                self.params.append(
                    Parameter(np.ones(layer.channels), f"layer{i}.gamma")
                )
                self.params.append(
                    Parameter(np.zeros(layer.channels), f"layer{i}.beta")
                )
                self.buffers[f"layer{i}.running_mean"] = np.zeros(layer.channels)
                self.buffers[f"layer{i}.running_var"] = np.ones(layer.channels)
            prev = layer.channels
        self._by_name = {p.name: p for p in self.params}

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params)

    def receptive_field(self) -> ReceptiveField:
        return receptive_field(self.config)

    def _param(self, name: str) -> Parameter:
        return self._by_name[name]

    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        """Run the network on (B, 1, F, T); returns unit-norm embeddings of
        shape (B, K, F, T)."""
        h = x
        for i, layer in enumerate(self.config.layers):
            skip = h
            h = ad.conv2d(
                h,
                self._param(f"layer{i}.weight").tensor,
                self._param(f"layer{i}.bias").tensor,
                dilation=layer.dilation,
            )
            if layer.batch_norm:
                h = ad.batch_norm(
                    h,
                    self._param(f"layer{i}.gamma").tensor,
                    self._param(f"layer{i}.beta").tensor,
                    self.buffers[f"layer{i}.running_mean"],
                    self.buffers[f"layer{i}.running_var"],
                    mode=mode,
                )
            if layer.activation:
                h = h.relu()
            if layer.residual:
                h = ad.residual_add(h, skip)
        norm_sq = (h * h).sum(axis=1, keepdims=True)
        return h / (norm_sq + NORM_GUARD).sqrt()

    def embed(self, features: FeatureMatrix) -> np.ndarray:
        """Inference pass on an (F, T) feature grid; returns (F, T, K)."""
        with ad.no_grad():
            out = self.forward(
                Tensor(features.values[None, None, :, :]), mode="eval"
            )
        return out.data[0].transpose(1, 2, 0)

    def embed_chunked(self, features: FeatureMatrix, block: int = 2000) -> np.ndarray:
        """Like :meth:`embed` but processes long inputs in overlapping time
        blocks, bounding peak memory.  Exactly equals the batch result."""
        n_t = features.values.shape[1]
        lag = self.receptive_field().lag
        if n_t <= block:
            return self.embed(features)
        pieces = []
        start = 0
        while start < n_t:
            stop = min(start + block, n_t)
            lo = max(0, start - lag)
            hi = min(n_t, stop + lag)
            sub = FeatureMatrix(features.values[:, lo:hi], features.floor_eps)
            out = self.embed(sub)
            pieces.append(out[:, start - lo : stop - lo, :])
            start = stop
        return np.concatenate(pieces, axis=1)

    # -- checkpointing -----------------------------------------------------

    def state(self):
        return self.params, self.buffers

    def load_state(self, params: dict, buffers: dict) -> None:
        for p in self.params:
            values, m, v = params[p.name]
            p.tensor.data = values.copy()
            p.adam_m = m.copy()
            p.adam_v = v.copy()
        for name in self.buffers:
            self.buffers[name] = buffers[name].copy()


class StreamingEncoder:
    """Emit embedding columns online with a fixed lag.

    Frames are pushed in time order; the embedding for frame t is emitted
    once frame t + lag has arrived (or the stream is finished).  Emitted
    columns equal the batch forward result: a column is computed from a
    window that either touches the true sequence edge or supplies at least
    ``lag`` frames of real context on each side.
    """

    def __init__(self, network: Network):
        self.network = network
        self.lag = network.receptive_field().lag
        self._buffer = None  # input columns from index self._offset onward
        self._offset = 0
        self._ingested = 0
        self._emitted = 0
        self._finished = False

    def push(self, cols: np.ndarray, start: int | None = None) -> np.ndarray:
        """Ingest (F, n) feature columns; returns newly emitted (F, m, K)."""
        if self._finished:
            raise SequencingError("stream already finished")
        if start is not None and start != self._ingested:
            raise SequencingError(
                f"expected chunk starting at frame {self._ingested}, got {start}"
            )
        cols = np.atleast_2d(np.asarray(cols, dtype=np.float64))
        if self._buffer is None:
            self._buffer = cols
        else:
            self._buffer = np.concatenate([self._buffer, cols], axis=1)
        self._ingested += cols.shape[1]
        # frame t is final once t + lag < ingested
        return self._emit_upto(self._ingested - self.lag - 1, at_end=False)

    def finish(self) -> np.ndarray:
        """Flush the trailing columns, zero-padding the missing future."""
        if self._finished:
            raise SequencingError("stream already finished")
        self._finished = True
        if self._ingested == 0:
            k = self.network.config.embedding_dim
            return np.zeros((0, 0, k))
        return self._emit_upto(self._ingested - 1, at_end=True)

    def _emit_upto(self, last: int, at_end: bool) -> np.ndarray:
        first = self._emitted
        if last < first:
            n_f = self._buffer.shape[0] if self._buffer is not None else 0
            return np.zeros((n_f, 0, self.network.config.embedding_dim))
        lo = max(0, first - self.lag)
        hi = self._ingested if at_end else min(self._ingested, last + self.lag + 1)
        window = self._buffer[:, lo - self._offset : hi - self._offset]
        out = self.network.embed(FeatureMatrix(window, 0.0))
        emitted = out[:, first - lo : last + 1 - lo, :]
        self._emitted = last + 1
        # drop columns no longer needed as left context
        keep_from = max(0, self._emitted - self.lag)
        if keep_from > self._offset:
            self._buffer = self._buffer[:, keep_from - self._offset :]
            self._offset = keep_from
        return emitted
