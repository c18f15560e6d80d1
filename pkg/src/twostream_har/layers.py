"""Differentiable layers: Conv1D, BatchNorm, Dropout, GAP, LSTM, Dense.

Conv1D and LSTM are fused kernels with hand-written backward rules; the
rest are compositions of :mod:`twostream_har.tensor` primitives.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .exceptions import ConfigError, DimensionError, ModeError, ValidationError
from .tensor import Tensor

GATE_ORDER = ("input", "forget", "cell", "output")


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base class: parameter discovery, train/eval mode, state dicts.

    Parameters are the ``Tensor`` attributes with ``requires_grad``; buffers
    are the attribute names listed in ``_buffers`` (non-trained state such as
    BatchNorm running statistics). Child layers are discovered recursively in
    attribute order, so names are stable across builds.
    """

    _buffers: tuple = ()

    def __init__(self):
        self.training = True

    def _children(self) -> Iterator[tuple[str, "Layer"]]:
        for name, value in vars(self).items():
            if isinstance(value, Layer):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Layer):
                        yield f"{name}{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}/")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}/")

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters(prefix)}
        state.update({name: np.array(b, copy=True) for name, b in self.named_buffers(prefix)})
        return state

    def load_state_dict(self, state: dict, prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {value.shape} != parameter shape {p.shape}")
            p.data = value.copy()
        self._load_buffers(state, prefix)

    def _load_buffers(self, state, prefix):
        for name in self._buffers:
            setattr(self, name, np.array(state[prefix + name], dtype=np.float64))
        for name, child in self._children():
            child._load_buffers(state, f"{prefix}{name}/")

    def train(self, mode: bool = True) -> "Layer":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Layer":
        return self.train(False)

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        raise NotImplementedError


# ---------------------------------------------------------------------------
# fused kernels


def conv1d(x, kernel, bias) -> Tensor:
    """Valid cross-correlation: x [N, C_in, L], kernel [C_out, C_in, K] -> [N, C_out, L-K+1]."""
    x, kernel, bias = T.as_tensor(x), T.as_tensor(kernel), T.as_tensor(bias)
    if x.ndim != 3 or kernel.ndim != 3 or x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape} incompatible with kernel {kernel.shape}")
    n, c_in, length = x.shape
    c_out, _, k = kernel.shape
    if length < k:
        raise DimensionError(f"conv1d: input length {length} shorter than kernel length {k}")
    l_out = length - k + 1
    # cols[n, l, c*k]
    cols = sliding_window_view(x.data, k, axis=2).transpose(0, 2, 1, 3).reshape(n, l_out, c_in * k)
    w2 = kernel.data.reshape(c_out, c_in * k)
    out = (cols @ w2.T).transpose(0, 2, 1) + bias.data[None, :, None]

    def backward(g):
        g_nlo = g.transpose(0, 2, 1)
        gk = gb = gx = None
        if kernel.requires_grad:
            gk = (g_nlo.reshape(-1, c_out).T @ cols.reshape(-1, c_in * k)).reshape(kernel.shape)
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = (g_nlo @ w2).reshape(n, l_out, c_in, k)
            gx = np.zeros_like(x.data)
            for j in range(k):
                gx[:, :, j : j + l_out] += gcols[:, :, :, j].transpose(0, 2, 1)
        return gx, gk, gb

    return Tensor._from_op(np.ascontiguousarray(out), (x, kernel, bias), backward, "conv1d")


def lstm(x, w, u, b, return_sequences: bool = False) -> Tensor:
    """LSTM recurrence over x [B, T, d] with gates packed as (i, f, g, o).

    ``w`` is [d, 4u], ``u`` is [u, 4u], ``b`` is [4u]; h_0 = c_0 = 0.
    Backpropagation through time is done in one hand-written reverse loop.
    """
    x, w, u, b = (T.as_tensor(v) for v in (x, w, u, b))
    if x.ndim != 3:
        raise DimensionError(f"lstm: expected input [batch, time, features], got {x.shape}")
    batch, steps, dim = x.shape
    if steps < 1:
        raise DimensionError("lstm: sequence must have at least one step")
    if w.ndim != 2 or w.shape[0] != dim:
        raise DimensionError(f"lstm: input feature size {dim} does not match input kernel {w.shape}")
    units = u.shape[0]
    if w.shape[1] != 4 * units or u.shape != (units, 4 * units) or b.shape != (4 * units,):
        raise DimensionError(f"lstm: inconsistent kernels W{w.shape} U{u.shape} b{b.shape}")

    xw = x.data @ w.data + b.data
    uu = u.data
    h = np.zeros((batch, units))
    c = np.zeros((batch, units))
    hs = np.empty((batch, steps, units))
    gates = np.empty((steps, 4, batch, units))  # activated i, f, g, o
    cs = np.empty((steps, batch, units))
    tcs = np.empty((steps, batch, units))
    for t in range(steps):
        z = xw[:, t] + h @ uu
        zi, zf, zg, zo = np.split(z, 4, axis=1)
        gi = 0.5 * (1.0 + np.tanh(0.5 * zi))
        gf = 0.5 * (1.0 + np.tanh(0.5 * zf))
        gg = np.tanh(zg)
        go = 0.5 * (1.0 + np.tanh(0.5 * zo))
        c = gf * c + gi * gg
        tc = np.tanh(c)
        h = go * tc
        gates[t] = (gi, gf, gg, go)
        cs[t] = c
        tcs[t] = tc
        hs[:, t] = h
    out = hs if return_sequences else hs[:, -1].copy()

    def backward(grad):
        if return_sequences:
            dh_seq = grad
        else:
            dh_seq = np.zeros_like(hs)
            dh_seq[:, -1] = grad
        dz_all = np.empty((batch, steps, 4 * units))
        du = np.zeros_like(uu)
        dh_next = np.zeros((batch, units))
        dc_next = np.zeros((batch, units))
        for t in range(steps - 1, -1, -1):
            gi, gf, gg, go = gates[t]
            tc = tcs[t]
            c_prev = cs[t - 1] if t > 0 else np.zeros((batch, units))
            h_prev = hs[:, t - 1] if t > 0 else np.zeros((batch, units))
            dh = dh_seq[:, t] + dh_next
            dc = dh * go * (1.0 - tc * tc) + dc_next
            dz = dz_all[:, t]
            dz[:, :units] = dc * gg * gi * (1.0 - gi)
            dz[:, units : 2 * units] = dc * c_prev * gf * (1.0 - gf)
            dz[:, 2 * units : 3 * units] = dc * gi * (1.0 - gg * gg)
            dz[:, 3 * units :] = dh * tc * go * (1.0 - go)
            du += h_prev.T @ dz
            dh_next = dz @ uu.T
            dc_next = dc * gf
        flat = dz_all.reshape(-1, 4 * units)
        gx = (dz_all @ w.data.T) if x.requires_grad else None
        gw = (x.data.reshape(-1, dim).T @ flat) if w.requires_grad else None
        gb = flat.sum(axis=0) if b.requires_grad else None
        return gx, gw, du, gb

    return Tensor._from_op(out, (x, w, u, b), backward, "lstm")


# ---------------------------------------------------------------------------
# layers


class Conv1D(Layer):
    def __init__(
        self, in_channels: int, out_channels: int = 16, kernel_size: int = 3, activation: Optional[str] = None, rng=None
    ):
        super().__init__()
        if out_channels < 1 or kernel_size < 1 or in_channels < 1:
            raise ConfigError("Conv1D: channel counts and kernel size must be >= 1")
        if activation not in (None, "relu"):
            raise ConfigError(f"Conv1D: unsupported activation {activation!r}")
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (out_channels, in_channels, kernel_size)
        self.kernel = Tensor(
            glorot_uniform(rng, shape, in_channels * kernel_size, out_channels * kernel_size), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[2]

    def forward(self, x):
        out = conv1d(x, self.kernel, self.bias)
        return T.relu(out) if self.activation == "relu" else out


class BatchNorm(Layer):
    """Batch normalization over every axis except ``axis``.

    Running statistics follow ``running = momentum * running + (1 - momentum) * batch``
    using the biased batch variance.
    """

    _buffers = ("running_mean", "running_var")

    def __init__(self, num_features: int, axis: int = -1, momentum: float = 0.99, eps: float = 1e-3):
        super().__init__()
        self.axis = axis
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(num_features), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features), requires_grad=True)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def _bshape(self, ndim):
        shape = [1] * ndim
        shape[self.axis % ndim] = -1
        return tuple(shape)

    def forward(self, x):
        x = T.as_tensor(x)
        axis = self.axis % x.ndim
        if x.shape[axis] != self.gamma.shape[0]:
            raise DimensionError(f"BatchNorm: expected {self.gamma.shape[0]} features on axis {axis}, got {x.shape}")
        bshape = self._bshape(x.ndim)
        gamma = T.reshape(self.gamma, bshape)
        beta = T.reshape(self.beta, bshape)
        if not self.training:
            xhat = (x - self.running_mean.reshape(bshape)) / np.sqrt(self.running_var.reshape(bshape) + self.eps)
            return xhat * gamma + beta
        if x.shape[0] < 2:
            raise ValidationError("BatchNorm: train mode needs a batch of at least 2 samples")
        axes = tuple(i for i in range(x.ndim) if i != axis)
        mu = T.mean(x, axes, keepdims=True)
        xc = x - mu
        var = T.mean(xc * xc, axes, keepdims=True)
        xhat = xc / T.sqrt(var + self.eps)
        m = self.momentum
        self.running_mean = m * self.running_mean + (1.0 - m) * mu.data.reshape(-1)
        self.running_var = m * self.running_var + (1.0 - m) * var.data.reshape(-1)
        return xhat * gamma + beta


class Dropout(Layer):
    """Inverted dropout with a private seeded generator."""

    def __init__(self, rate: float = 0.4, seed: int = 0):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"Dropout: rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = np.random.default_rng(seed)

    def forward(self, x):
        x = T.as_tensor(x)
        if not self.training or self.rate == 0.0:
            return x
        keep = self.rng.random(x.shape) >= self.rate
        return x * (keep / (1.0 - self.rate))


class GlobalAveragePooling(Layer):
    """Mean over the last (length) axis: [..., C, L] -> [..., C]."""

    def forward(self, x):
        x = T.as_tensor(x)
        if x.shape[-1] < 1:
            raise DimensionError("GlobalAveragePooling: length axis is empty")
        return T.mean(x, axis=-1)


class LSTM(Layer):
    def __init__(
        self,
        input_dim: int,
        units: int,
        return_sequences: bool = False,
        forget_bias: float = 0.5,
        rng=None,
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.units = units
        self.return_sequences = return_sequences
        self.kernel = Tensor(glorot_uniform(rng, (input_dim, 4 * units), input_dim, 4 * units), requires_grad=True)
        self.recurrent_kernel = Tensor(glorot_uniform(rng, (units, 4 * units), units, 4 * units), requires_grad=True)
        bias = np.zeros(4 * units)
        bias[units : 2 * units] = forget_bias
        self.bias = Tensor(bias, requires_grad=True)

    def forward(self, x):
        return lstm(x, self.kernel, self.recurrent_kernel, self.bias, self.return_sequences)


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, activation: Optional[str] = None, rng=None):
        super().__init__()
        if activation not in (None, "softmax"):
            raise ConfigError(f"Dense: unsupported activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.activation = activation
        self.weight = Tensor(
            glorot_uniform(rng, (in_features, out_features), in_features, out_features), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def forward(self, x):
        out = T.matmul(x, self.weight) + self.bias
        return T.softmax(out) if self.activation == "softmax" else out


class TimeDistributed(Layer):
    """Apply ``inner`` to every step of [B, T, ...] with shared parameters.

    Folding time into the batch axis is exact for per-sample layers.
    """

    def __init__(self, inner: Layer):
        super().__init__()
        self.inner = inner

    def forward(self, x):
        x = T.as_tensor(x)
        if x.ndim < 3:
            raise DimensionError(f"TimeDistributed: expected [batch, time, ...], got {x.shape}")
        b, t = x.shape[:2]
        y = self.inner(T.reshape(x, (b * t,) + x.shape[2:]))
        return T.reshape(y, (b, t) + y.shape[1:])


class Sequential(Layer):
    def __init__(self, *layers: Layer):
        super().__init__()
        self.layers = list(layers)

    def _children(self):
        for i, layer in enumerate(self.layers):
            yield getattr(layer, "name", f"layer{i}"), layer

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def check_eval(layer: Layer, what: str = "network") -> None:
    if layer.training:
        raise ModeError(f"{what} is in train mode; call .eval() before scoring")
