"""Compact per-column boundary predictor on top of the autodiff engine.

Architecture (input ``(B, 3, H, W)``, output ``(B, 3, W)``):

* three 4x4 stride-2 convolutions and one (4, 3) row-stride-2 convolution,
  each followed by ReLU, shrinking ``H x W`` to ``H/16 x W/8``;
* rows folded into channels to get one feature vector per low-res column;
* dropout, a circular column-mixing convolution (wraps across the seam), ReLU,
  dropout;
* a per-column linear head emitting 3 x 8 values per low-res column, unfolded
  to the full output width.

``yc`` and ``yf`` are squashed with ``(pi/2) tanh``, ``yw`` with a logistic.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


class ConfigurationError(ValueError):
    pass


class StateError(RuntimeError):
    pass


@dataclass(frozen=True)
class PredictorConfig:
    height: int = 64
    width: int = 256
    channels: tuple = (8, 16, 32, 32)
    mix_channels: int = 64
    mix_kernel: int = 5
    dropout: float = 0.5
    dtype: str = "float32"

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ConfigurationError("dropout probability must be in [0, 1)")
        if self.height % 16 or self.width % 8:
            raise ConfigurationError("height must be a multiple of 16 and width of 8")
        if self.mix_kernel % 2 == 0:
            raise ConfigurationError("column-mixing kernel width must be odd")

    @property
    def upsample(self):
        return 8

    def fingerprint(self):
        return (
            f"h{self.height}w{self.width}c{'-'.join(map(str, self.channels))}"
            f"m{self.mix_channels}k{self.mix_kernel}p{self.dropout}"
        )


@dataclass
class ParamVector:
    """Flat parameter array plus the segment map ``name -> (offset, shape)``."""

    data: np.ndarray
    segments: "OrderedDict[str, tuple]" = field(default_factory=OrderedDict)

    def get(self, name):
        off, shape = self.segments[name]
        return self.data[off:off + int(np.prod(shape))].reshape(shape)

    def set(self, name, value):
        off, shape = self.segments[name]
        self.data[off:off + int(np.prod(shape))] = np.asarray(value).reshape(-1)

    def copy(self):
        return ParamVector(self.data.copy(), OrderedDict(self.segments))

    def like(self, data):
        return ParamVector(np.asarray(data), self.segments)

    def __len__(self):
        return self.data.shape[0]


class Predictor:
    """Stateless apart from the record of the last differentiable forward pass."""

    def __init__(self, config=PredictorConfig()):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        c = config
        shapes = OrderedDict()
        cin = 3
        for k, cout in enumerate(c.channels):
            kh, kw = (4, 3) if k == len(c.channels) - 1 else (4, 4)
            shapes[f"conv{k}.w"] = (cout, cin, kh, kw)
            shapes[f"conv{k}.b"] = (cout,)
            cin = cout
        self.feat_rows = c.height // 16
        feat = cin * self.feat_rows
        shapes["mix.w"] = (c.mix_channels, feat, c.mix_kernel)
        shapes["mix.b"] = (c.mix_channels,)
        shapes["head.w"] = (3 * c.upsample, c.mix_channels)
        shapes["head.b"] = (3 * c.upsample,)
        self.segments = OrderedDict()
        off = 0
        for name, shape in shapes.items():
            self.segments[name] = (off, shape)
            off += int(np.prod(shape))
        self.size = off
        self._last = None

    # -- parameters ---------------------------------------------------------

    def zeros(self):
        return ParamVector(np.zeros(self.size, dtype=self.dtype), OrderedDict(self.segments))

    def init_params(self, rng):
        """He-normal weights; head biases start at typical boundary values."""
        p = self.zeros()
        for name, (off, shape) in self.segments.items():
            if name.endswith(".w"):
                fan_in = int(np.prod(shape[1:]))
                p.set(name, rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))
        up = self.config.upsample
        bias = np.zeros((3, up))
        bias[0] = np.arctanh(-0.5 / (np.pi / 2))
        bias[1] = np.arctanh(0.6 / (np.pi / 2))
        bias[2] = -2.0
        p.set("head.b", bias)
        p.set("head.w", p.get("head.w") * 0.1)
        return p

    # -- forward / backward -------------------------------------------------

    def _check(self, theta, x):
        c = self.config
        if x.ndim != 4 or x.shape[1:] != (3, c.height, c.width):
            raise ConfigurationError(f"expected input (B, 3, {c.height}, {c.width}), got {x.shape}")
        if len(theta) != self.size:
            raise ConfigurationError(f"parameter vector has {len(theta)} entries, expected {self.size}")

    def graph(self, theta, x, stochastic=False, rng=None, requires_grad=True):
        """Build the forward graph; returns ``(theta_leaf, output (B, 3, W))``.

        ``theta`` may already be a leaf tensor, so several passes can share one
        parameter node and accumulate into a single gradient.
        """
        if isinstance(theta, ad.Tensor):
            leaf = theta
        else:
            data = theta.data if isinstance(theta, ParamVector) else np.asarray(theta)
            leaf = ad.Tensor(data.astype(self.dtype, copy=False), requires_grad=requires_grad)
        x = np.asarray(x, dtype=self.dtype)
        self._check(leaf.data, x)
        if stochastic and rng is None:
            raise ConfigurationError("stochastic forward pass needs a random generator")
        c = self.config
        P = {name: ad.segment(leaf, off, shape) for name, (off, shape) in self.segments.items()}
        h = ad.Tensor(x)
        n = len(c.channels)
        for k in range(n):
            stride, pad = ((2, 1), (1, 1)) if k == n - 1 else ((2, 2), (1, 1))
            h = ad.relu(ad.conv2d(h, P[f"conv{k}.w"], P[f"conv{k}.b"], stride, pad))
        B, C, R, L = h.shape
        h = ad.reshape(h, (B, C * R, L))
        p = c.dropout if stochastic else 0.0
        h = ad.dropout(h, p, rng)
        h = ad.relu(ad.conv1d_circular(h, P["mix.w"], P["mix.b"]))
        h = ad.dropout(h, p, rng)
        h = ad.column_linear(h, P["head.w"], P["head.b"])  # (B, 3*up, L)
        up = c.upsample
        h = ad.reshape(h, (B, 3, up, L))
        h = ad.transpose(h, (0, 1, 3, 2))
        h = ad.reshape(h, (B, 3, L * up))
        scale = np.array([np.pi / 2, np.pi / 2, 0.0], dtype=self.dtype)[None, :, None]
        gate = np.array([0.0, 0.0, 1.0], dtype=self.dtype)[None, :, None]
        out = ad.tanh(h) * scale + ad.sigmoid(h) * gate
        if not np.all(np.isfinite(out.data)):
            raise ad.NumericError("non-finite activation in predictor forward pass")
        return leaf, out

    def forward(self, theta, x, stochastic=False, rng=None):
        """Predict ``(B, 3, W)`` boundaries and remember the graph for ``backward``."""
        leaf, out = self.graph(theta, x, stochastic, rng, requires_grad=True)
        self._last = (leaf, out)
        return out.data

    def predict(self, theta, x, batch_size=32):
        """Evaluation-mode prediction without recording a graph."""
        x = np.asarray(x)
        outs = []
        for s in range(0, len(x), batch_size):
            _, out = self.graph(theta, x[s:s + batch_size], requires_grad=False)
            outs.append(out.data)
        return np.concatenate(outs, axis=0)

    def backward(self, upstream):
        """Gradient of ``sum(upstream * output)`` of the last ``forward`` w.r.t. theta."""
        if self._last is None:
            raise StateError("backward called before forward")
        leaf, out = self._last
        self._last = None
        out.backward(np.asarray(upstream, dtype=out.data.dtype))
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        return ParamVector(grad, OrderedDict(self.segments))
