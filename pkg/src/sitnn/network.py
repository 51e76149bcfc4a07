"""Dense-tensor layers, architecture parsing, and backpropagation through time.

Sequences are numpy arrays with a leading time axis: ``(T, N, C, H, W)`` for
convolutional stages and ``(T, N, F)`` after flattening.  Stateless layers
(conv, batch norm, pooling, dropout, fully connected) fold time into the
batch axis and process the whole sequence at once; spiking layers carry
membrane/recovery state and iterate over time.  Batch-norm statistics are
therefore taken over time and batch jointly during training, with running
estimates used at evaluation.

Backward passes are hand-derived.  Spiking layers run the time recursion in
reverse, alternating membrane and recovery gradients; the hard threshold is
differentiated with the smooth surrogate slope ``1 / (1 + pi^2 x^2)``
evaluated at the pre-reset membrane minus threshold, and the reset
multiplexer ``u_post = (1 - s) y + s c`` stays inside the graph with
``ds/dy`` taken as that same slope.  Setting ``relaxed=True`` replaces the
hard threshold with its smooth primitive in the forward pass, which makes
the whole network differentiable and lets finite differences validate the
analytic gradients.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .neurons import IZH_CONSTANT, IZH_LINEAR, NeuronParams

CONV = "conv"
BATCH_NORM = "batch_norm"
SPIKING = "spiking"
MAX_POOL = "max_pool"
DROPOUT = "dropout"
FULLY_CONNECTED = "fully_connected"
AVG_POOL_VOTING = "avg_pool_voting"

NEURON_LIF = "lif"
NEURON_SIT = "sit"
NEURON_SIT_BURSTING = "sit_bursting"
NEURON_IZHIKEVICH = "izhikevich"

DEFAULT_DROPOUT_RATE = 0.5


@dataclass(frozen=True)
class LayerSpec:
    """One parsed architecture token."""

    kind: str
    out_channels: int | None = None
    kernel: int | None = None
    stride: int | None = None
    features: int | None = None
    rate: float | None = None
    neuron: str | None = None


_CONV_RE = re.compile(r"c(\d+)k(\d+)s(\d+)\Z")
_MP_RE = re.compile(r"MPk(\d+)s(\d+)\Z")
_AP_RE = re.compile(r"APk(\d+)s(\d+)\Z")
_FC_RE = re.compile(r"FC(\d+)\Z")
_NEURON_TOKENS = {
    "LIF": NEURON_LIF,
    "SIT": NEURON_SIT,
    "SITB": NEURON_SIT_BURSTING,
    "IZH": NEURON_IZHIKEVICH,
}


def _positive(value: int, what: str, token: str, pos: int) -> int:
    if value < 1:
        raise ValueError(f"{what} must be >= 1 in token {token!r} at position {pos}")
    return value


def _parse_token(token: str, pos: int) -> LayerSpec:
    if m := _CONV_RE.match(token):
        x, k, s = (int(g) for g in m.groups())
        return LayerSpec(kind=CONV,
                         out_channels=_positive(x, "channel count", token, pos),
                         kernel=_positive(k, "kernel", token, pos),
                         stride=_positive(s, "stride", token, pos))
    if m := _MP_RE.match(token):
        k, s = (int(g) for g in m.groups())
        return LayerSpec(kind=MAX_POOL, kernel=_positive(k, "kernel", token, pos),
                         stride=_positive(s, "stride", token, pos))
    if m := _AP_RE.match(token):
        k, s = (int(g) for g in m.groups())
        return LayerSpec(kind=AVG_POOL_VOTING,
                         kernel=_positive(k, "kernel", token, pos),
                         stride=_positive(s, "stride", token, pos))
    if m := _FC_RE.match(token):
        return LayerSpec(kind=FULLY_CONNECTED,
                         features=_positive(int(m.group(1)), "feature count", token, pos))
    if token == "BN":
        return LayerSpec(kind=BATCH_NORM)
    if token == "DP":
        return LayerSpec(kind=DROPOUT, rate=DEFAULT_DROPOUT_RATE)
    if token in _NEURON_TOKENS:
        return LayerSpec(kind=SPIKING, neuron=_NEURON_TOKENS[token])
    raise ValueError(f"unknown token {token!r} at position {pos}")


def parse_architecture(text: str) -> list[LayerSpec]:
    """Parse an architecture string into a flat layer list.

    Tokens: ``c{x}k{y}s{z}`` conv, ``MPk{y}s{z}`` max pool, ``BN`` batch
    norm, ``LIF``/``SIT``/``SITB``/``IZH`` spiking neuron layers, ``DP``
    dropout, ``FC{m}`` fully connected, ``APk{y}s{z}`` average-pool voting,
    and ``{...}*n`` repeating a dash-separated group n times.  Repeats are
    expanded; formatting a parsed list emits the flat form.
    """
    specs: list[LayerSpec] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "-":
            i += 1
            continue
        if ch == "{":
            close = text.find("}", i)
            if close < 0:
                raise ValueError(f"unclosed '{{' at position {i}")
            m = re.match(r"\*(\d+)", text[close + 1:])
            if m is None:
                raise ValueError(
                    f"malformed repeat at position {close + 1}: expected '*<count>'")
            count = int(m.group(1))
            if count < 1:
                raise ValueError(f"repeat count must be >= 1 at position {close + 1}")
            specs.extend(parse_architecture(text[i + 1:close]) * count)
            i = close + 1 + m.end()
            continue
        end = n
        for j in range(i, n):
            if text[j] in "-{":
                end = j
                break
        specs.append(_parse_token(text[i:end], i))
        i = end
    return specs


_NEURON_NAMES = {v: k for k, v in _NEURON_TOKENS.items()}


def format_architecture(specs: Sequence[LayerSpec]) -> str:
    """Render a layer list back to the token notation (flat, no repeats)."""
    tokens = []
    for spec in specs:
        if spec.kind == CONV:
            tokens.append(f"c{spec.out_channels}k{spec.kernel}s{spec.stride}")
        elif spec.kind == MAX_POOL:
            tokens.append(f"MPk{spec.kernel}s{spec.stride}")
        elif spec.kind == AVG_POOL_VOTING:
            tokens.append(f"APk{spec.kernel}s{spec.stride}")
        elif spec.kind == FULLY_CONNECTED:
            tokens.append(f"FC{spec.features}")
        elif spec.kind == BATCH_NORM:
            tokens.append("BN")
        elif spec.kind == DROPOUT:
            tokens.append("DP")
        elif spec.kind == SPIKING:
            tokens.append(_NEURON_NAMES[spec.neuron])
        else:
            raise ValueError(f"cannot format layer kind {spec.kind!r}")
    return "-".join(tokens)


def heaviside(x: np.ndarray) -> np.ndarray:
    return (x >= 0).astype(x.dtype)


def soft_spike(x: np.ndarray) -> np.ndarray:
    """Smooth primitive of the spike function: arctan(pi x)/pi + 1/2."""
    return (np.arctan(np.pi * x) / np.pi + 0.5).astype(x.dtype)


def surrogate_slope(x: np.ndarray) -> np.ndarray:
    """Derivative 1 / (1 + pi^2 x^2) shared by both spike modes."""
    return (1.0 / (1.0 + (np.pi * x) ** 2)).astype(x.dtype)


def spiking_dropout_mask(rate: float, shape: tuple[int, ...],
                         seed: int) -> np.ndarray:
    """Bernoulli keep mask scaled by 1/(1 - rate); deterministic under seed."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=np.float64)
    rng = np.random.default_rng(seed)
    keep = rng.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


@dataclass
class ForwardContext:
    training: bool = False
    relaxed: bool = False
    rng: np.random.Generator | None = None


class Layer:
    """Base layer: stateless between calls, caches only inside one pass."""

    def parameters(self) -> dict[str, np.ndarray]:
        return {}

    def gradients(self) -> dict[str, np.ndarray]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, ctx: ForwardContext) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _fold_time(x: np.ndarray) -> np.ndarray:
    return x.reshape((x.shape[0] * x.shape[1],) + x.shape[2:])


def _unfold_time(x: np.ndarray, t: int) -> np.ndarray:
    return x.reshape((t, x.shape[0] // t) + x.shape[1:])


class ConvLayer(Layer):
    """2-D cross-correlation with zero padding ``(kernel - 1) // 2``.

    The padding choice preserves spatial size for odd kernels at stride 1.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int, dtype, rng: np.random.Generator):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = (kernel - 1) // 2
        fan_in = in_channels * kernel * kernel
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = rng.uniform(-bound, bound,
                                  (out_channels, in_channels, kernel, kernel)).astype(dtype)
        self.bias = rng.uniform(-bound, bound, out_channels).astype(dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cols = None
        self._x_shape = None

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def gradients(self):
        return {"weight": self.grad_weight, "bias": self.grad_bias}

    def output_size(self, size: int) -> int:
        return (size + 2 * self.padding - self.kernel) // self.stride + 1

    def _im2col(self, x: np.ndarray) -> tuple[np.ndarray, int, int]:
        b, c, h, w = x.shape
        k, s, p = self.kernel, self.stride, self.padding
        h_out = (h + 2 * p - k) // s + 1
        w_out = (w + 2 * p - k) // s + 1
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        cols = np.empty((b, c, k, k, h_out, w_out), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, i, j] = xp[:, :, i:i + h_out * s:s, j:j + w_out * s:s]
        return cols.reshape(b, c * k * k, h_out * w_out), h_out, w_out

    def forward(self, x: np.ndarray, ctx: ForwardContext) -> np.ndarray:
        t = x.shape[0]
        xf = _fold_time(x)
        if xf.shape[1] != self.in_channels:
            raise ValueError(f"conv expects {self.in_channels} channels, "
                             f"got input shape {x.shape}")
        cols, h_out, w_out = self._im2col(xf)
        w2 = self.weight.reshape(self.out_channels, -1)
        out = np.matmul(w2, cols) + self.bias[:, None]
        self._cols = cols
        self._x_shape = xf.shape
        out = out.reshape(xf.shape[0], self.out_channels, h_out, w_out)
        return _unfold_time(out, t)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        t = gy.shape[0]
        g = _fold_time(gy)
        b = g.shape[0]
        g2 = g.reshape(b, self.out_channels, -1)
        cols = self._cols
        self.grad_weight = np.einsum("bop,bcp->oc", g2, cols).reshape(self.weight.shape)
        self.grad_bias = g2.sum(axis=(0, 2))
        w2 = self.weight.reshape(self.out_channels, -1)
        dcols = np.matmul(w2.T, g2)

        _, c, h, w = self._x_shape
        k, s, p = self.kernel, self.stride, self.padding
        h_out = (h + 2 * p - k) // s + 1
        w_out = (w + 2 * p - k) // s + 1
        dcols = dcols.reshape(b, c, k, k, h_out, w_out)
        dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=gy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + h_out * s:s, j:j + w_out * s:s] += dcols[:, :, i, j]
        dx = dxp[:, :, p:p + h, p:p + w]
        return _unfold_time(dx, t)


class BatchNormLayer(Layer):
    """Per-channel normalization; time is folded into the batch axis."""

    def __init__(self, channels: int, dtype, eps: float = 1e-5,
                 momentum: float = 0.1):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.grad_gamma = np.zeros_like(self.gamma)
        self.grad_beta = np.zeros_like(self.beta)
        self._cache = None

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def gradients(self):
        return {"gamma": self.grad_gamma, "beta": self.grad_beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    @staticmethod
    def _axes_and_shape(x: np.ndarray):
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        if x.ndim == 2:
            return (0,), (1, -1)
        raise ValueError(f"batch norm expects 2-D or 4-D folded input, got {x.ndim}-D")

    def forward(self, x: np.ndarray, ctx: ForwardContext) -> np.ndarray:
        t = x.shape[0]
        xf = _fold_time(x)
        axes, shape = self._axes_and_shape(xf)
        if ctx.training:
            mean = xf.mean(axis=axes)
            var = xf.var(axis=axes)
            self.running_mean = ((1 - self.momentum) * self.running_mean
                                 + self.momentum * mean).astype(self.running_mean.dtype)
            self.running_var = ((1 - self.momentum) * self.running_var
                                + self.momentum * var).astype(self.running_var.dtype)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (xf - mean.reshape(shape)) * inv_std.reshape(shape)
        out = self.gamma.reshape(shape) * xhat + self.beta.reshape(shape)
        self._cache = (xhat, inv_std, axes, shape, ctx.training)
        return _unfold_time(out.astype(x.dtype), t)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        t = gy.shape[0]
        g = _fold_time(gy)
        xhat, inv_std, axes, shape, training = self._cache
        self.grad_gamma = (g * xhat).sum(axis=axes)
        self.grad_beta = g.sum(axis=axes)
        dxhat = g * self.gamma.reshape(shape)
        if not training:
            dx = dxhat * inv_std.reshape(shape)
            return _unfold_time(dx.astype(gy.dtype), t)
        m = np.prod([g.shape[i] for i in axes])
        sum_dxhat = dxhat.sum(axis=axes, keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes, keepdims=True)
        dx = (inv_std.reshape(shape) / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return _unfold_time(dx.astype(gy.dtype), t)


class MaxPoolLayer(Layer):
    """Spatial max over spike activations; ties go to the first window index."""

    def __init__(self, kernel: int, stride: int):
        self.kernel = kernel
        self.stride = stride
        self._cache = None

    def output_size(self, size: int) -> int:
        return (size - self.kernel) // self.stride + 1

    def forward(self, x: np.ndarray, ctx: ForwardContext) -> np.ndarray:
        t = x.shape[0]
        xf = _fold_time(x)
        b, c, h, w = xf.shape
        k, s = self.kernel, self.stride
        h_out = (h - k) // s + 1
        w_out = (w - k) // s + 1
        best = None
        arg = None
        for i in range(k):
            for j in range(k):
                window = xf[:, :, i:i + h_out * s:s, j:j + w_out * s:s]
                if best is None:
                    best = window.copy()
                    arg = np.zeros(best.shape, dtype=np.int16)
                else:
                    better = window > best
                    best = np.where(better, window, best)
                    arg = np.where(better, np.int16(i * k + j), arg)
        self._cache = (arg, xf.shape)
        return _unfold_time(best, t)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        t = gy.shape[0]
        g = _fold_time(gy)
        arg, x_shape = self._cache
        b, c, h, w = x_shape
        k, s = self.kernel, self.stride
        h_out, w_out = g.shape[2], g.shape[3]
        dx = np.zeros(x_shape, dtype=gy.dtype)
        for i in range(k):
            for j in range(k):
                mask = arg == (i * k + j)
                dx[:, :, i:i + h_out * s:s, j:j + w_out * s:s] += g * mask
        return _unfold_time(dx, t)


class DropoutLayer(Layer):
    """Per-sample Bernoulli mask, constant across time, rescaled by keep rate."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x: np.ndarray, ctx: ForwardContext) -> np.ndarray:
        if not ctx.training or self.rate == 0.0:
            self._mask = None
            return x
        if ctx.rng is None:
            raise ValueError("training forward with dropout requires an rng")
        keep = ctx.rng.random(x.shape[1:]) >= self.rate
        self._mask = (keep / (1.0 - self.rate)).astype(x.dtype)
        return x * self._mask[None]

    def backward(self, gy: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return gy
        return gy * self._mask[None]


class FCLayer(Layer):
    """Affine map; flattens any trailing feature axes."""

    def __init__(self, in_features: int, out_features: int, dtype,
                 rng: np.random.Generator):
        self.in_features = in_features
        self.out_features = out_features
        bound = 1.0 / np.sqrt(in_features)
        self.weight = rng.uniform(-bound, bound, (out_features, in_features)).astype(dtype)
        self.bias = rng.uniform(-bound, bound, out_features).astype(dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None
        self._x_shape = None

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def gradients(self):
        return {"weight": self.grad_weight, "bias": self.grad_bias}

    def forward(self, x: np.ndarray, ctx: ForwardContext) -> np.ndarray:
        t = x.shape[0]
        self._x_shape = x.shape
        xf = _fold_time(x).reshape(t * x.shape[1], -1)
        if xf.shape[1] != self.in_features:
            raise ValueError(f"fully connected layer expects {self.in_features} "
                             f"features, got input shape {x.shape}")
        self._x = xf
        out = xf @ self.weight.T + self.bias
        return _unfold_time(out, t)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        t = gy.shape[0]
        g = _fold_time(gy)
        self.grad_weight = g.T @ self._x
        self.grad_bias = g.sum(axis=0)
        dx = g @ self.weight
        return dx.reshape(self._x_shape)


class SpikingLayer(Layer):
    """Elementwise spiking dynamics unrolled over the time axis.

    Charge/fire/reset ordering per family matches the scalar steppers in
    :mod:`sitnn.neurons`; the implementation is independent of them so the
    two can be cross-checked.  Initial state is ``(u_reset, 0)``.
    """

    def __init__(self, neuron: str, params: NeuronParams):
        self.neuron = neuron
        self.params = params
        self._cache = None

    def _spike(self, x: np.ndarray, relaxed: bool) -> np.ndarray:
        return soft_spike(x) if relaxed else heaviside(x)

    def forward(self, x: np.ndarray, ctx: ForwardContext) -> np.ndarray:
        p = self.params
        tau = p.tau
        steps = x.shape[0]
        u = np.full(x.shape[1:], p.u_reset, dtype=x.dtype)
        v = np.zeros(x.shape[1:], dtype=x.dtype)
        y_seq = np.empty_like(x)
        s_seq = np.empty_like(x)
        u_prev = np.empty_like(x)
        v_prev = np.empty_like(x)
        h_seq = np.empty_like(x) if self.neuron == NEURON_IZHIKEVICH else None

        for t in range(steps):
            u_prev[t] = u
            v_prev[t] = v
            if self.neuron == NEURON_LIF:
                y = u + (-(u - p.u_reset) + x[t]) / tau
                s = self._spike(y - p.u_threshold, ctx.relaxed)
                u = (1.0 - s) * y + s * p.u_reset
            elif self.neuron == NEURON_IZHIKEVICH:
                s = self._spike(u - p.u_threshold, ctx.relaxed)
                y = u + (p.k * u * u + IZH_LINEAR * u + IZH_CONSTANT - v + x[t]) / tau
                h = v + (p.a / tau) * (p.b * u - v)
                u = (1.0 - s) * y + s * p.c
                v = (1.0 - s) * h + s * (v + p.d)
                h_seq[t] = h
            else:
                y = (u + (p.k / tau) * (u - p.u_r) * (u - p.u_c)
                     - v / tau + x[t] / tau)
                s = self._spike(y - p.u_threshold, ctx.relaxed)
                u = (1.0 - s) * y + s * p.c
                h = v + (p.a / tau) * (p.b * (u - p.u_r) - v)
                v = h + s * p.d
            y_seq[t] = y
            s_seq[t] = s
        self._cache = (y_seq, s_seq, u_prev, v_prev, h_seq)
        return s_seq

    def backward(self, gy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ValueError("spiking layer backward requires forward caches")
        p = self.params
        tau = p.tau
        y_seq, s_seq, u_prev, v_prev, h_seq = self._cache
        steps = gy.shape[0]
        gx = np.empty_like(gy)
        g_u = np.zeros(gy.shape[1:], dtype=gy.dtype)
        g_v = np.zeros(gy.shape[1:], dtype=gy.dtype)

        for t in reversed(range(steps)):
            y, s = y_seq[t], s_seq[t]
            if self.neuron == NEURON_LIF:
                g_s = gy[t] + g_u * (p.u_reset - y)
                slope = surrogate_slope(y - p.u_threshold)
                g_y = g_u * (1.0 - s) + g_s * slope
                gx[t] = g_y / tau
                g_u = g_y * (1.0 - 1.0 / tau)
            elif self.neuron == NEURON_IZHIKEVICH:
                h = h_seq[t]
                g_s = gy[t] + g_u * (p.c - y) + g_v * (v_prev[t] + p.d - h)
                g_y = g_u * (1.0 - s)
                g_h = g_v * (1.0 - s)
                gx[t] = g_y / tau
                slope = surrogate_slope(u_prev[t] - p.u_threshold)
                g_u_new = (g_y * (1.0 + (2.0 * p.k * u_prev[t] + IZH_LINEAR) / tau)
                           + g_h * (p.a * p.b / tau) + g_s * slope)
                g_v = -g_y / tau + g_h * (1.0 - p.a / tau) + g_v * s
                g_u = g_u_new
            else:
                g_h = g_v
                g_u_tot = g_u + g_h * (p.a * p.b / tau)
                g_s = gy[t] + g_v * p.d + g_u_tot * (p.c - y)
                slope = surrogate_slope(y - p.u_threshold)
                g_y = g_u_tot * (1.0 - s) + g_s * slope
                gx[t] = g_y / tau
                g_u = g_y * (1.0 + (p.k / tau) * (2.0 * u_prev[t] - p.u_r - p.u_c))
                g_v = -g_y / tau + g_h * (1.0 - p.a / tau)
        return gx


def default_neuron_params(neuron: str, tau: float) -> NeuronParams:
    if neuron == NEURON_LIF:
        return NeuronParams.lif(tau=tau)
    if neuron == NEURON_SIT:
        return NeuronParams.sit(tau=tau)
    if neuron == NEURON_SIT_BURSTING:
        return NeuronParams.sit_bursting(tau=tau)
    if neuron == NEURON_IZHIKEVICH:
        return NeuronParams.izhikevich_tonic(tau=tau)
    raise ValueError(f"unknown spiking neuron kind {neuron!r}")


class Network:
    """An ordered layer stack with an optional trailing voting decode.

    Only spiking layers hold state, and that state lives strictly inside one
    ``forward_sequence`` call, so repeated calls from the same inputs are
    identical.
    """

    def __init__(self, specs: Sequence[LayerSpec], layers: list[tuple[str, Layer]],
                 input_shape: tuple[int, ...], output_features: int,
                 voting: tuple[int, int] | None):
        self.specs = list(specs)
        self.layers = layers
        self.input_shape = input_shape
        self.output_features = output_features
        self.voting = voting

    @property
    def is_hybrid(self) -> bool:
        neurons = {l.neuron for _, l in self.layers if isinstance(l, SpikingLayer)}
        return NEURON_LIF in neurons and bool(
            neurons & {NEURON_SIT, NEURON_SIT_BURSTING})

    @property
    def num_classes(self) -> int:
        if self.voting is None:
            return self.output_features
        return self.output_features // self.voting[0]

    def spiking_layers(self) -> list[tuple[str, SpikingLayer]]:
        return [(n, l) for n, l in self.layers if isinstance(l, SpikingLayer)]

    def forward_sequence(self, frames: np.ndarray, training: bool = False,
                         relaxed: bool = False,
                         rng: np.random.Generator | None = None) -> np.ndarray:
        """Run the whole stack over a (T, N, ...) frame sequence.

        Returns the final spike sequence (T, N, output_features).  The
        trailing voting pool, when present, is a decode stage applied by
        :func:`voting_decode`, not here.
        """
        if tuple(frames.shape[2:]) != self.input_shape:
            raise ValueError(f"expected input shape (T, N, *{self.input_shape}), "
                             f"got {frames.shape}")
        ctx = ForwardContext(training=training, relaxed=relaxed, rng=rng)
        x = frames
        for index, (name, layer) in enumerate(self.layers):
            try:
                x = layer.forward(x, ctx)
            except ValueError as exc:
                raise ValueError(f"layer {index} ({name}): {exc}") from exc
        return x

    def backward(self, grad_seq: np.ndarray) -> dict[str, np.ndarray]:
        """Backpropagate a loss gradient through time; returns named grads."""
        g = grad_seq
        for _, layer in reversed(self.layers):
            g = layer.backward(g)
        return self.gradients()

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, layer in self.layers:
            for key, value in layer.parameters().items():
                out[f"{name}.{key}"] = value
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, layer in self.layers:
            for key, value in layer.gradients().items():
                out[f"{name}.{key}"] = value
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, layer in self.layers:
            for key, value in layer.buffers().items():
                out[f"{name}.{key}"] = value
        return out

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        current = self.parameters()
        for key, value in values.items():
            if key not in current:
                raise KeyError(f"unknown parameter {key!r}")
            current[key][...] = value

    def set_buffers(self, values: dict[str, np.ndarray]) -> None:
        current = self.buffers()
        for key, value in values.items():
            if key not in current:
                raise KeyError(f"unknown buffer {key!r}")
            current[key][...] = value


def build_network(specs: Sequence[LayerSpec], input_shape: tuple[int, ...],
                  dtype=np.float32, rng: np.random.Generator | None = None,
                  tau: float = 2.0,
                  neuron_params: dict[str, NeuronParams] | None = None,
                  dropout_rates: Iterable[float] | None = None) -> Network:
    """Instantiate runtime layers from parsed specs.

    ``input_shape`` is ``(C, H, W)`` for convolutional stacks or ``(F,)``
    for flat inputs.  ``neuron_params`` overrides the built-in constants per
    neuron kind; ``dropout_rates`` overrides the parsed rates in order of
    appearance.  A trailing average-pool voting spec becomes the network's
    decode pool; anywhere else it is rejected.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    overrides = neuron_params or {}
    rates = list(dropout_rates) if dropout_rates is not None else None
    layers: list[tuple[str, Layer]] = []
    voting: tuple[int, int] | None = None
    shape = tuple(input_shape)
    dropout_index = 0

    for index, spec in enumerate(specs):
        name = f"layer{index}.{spec.kind}"
        if spec.kind == AVG_POOL_VOTING:
            if index != len(specs) - 1:
                raise ValueError("average-pool voting is only supported as the "
                                 f"final layer (found at index {index})")
            if spec.kernel != spec.stride:
                raise ValueError("voting pool requires kernel == stride")
            if len(shape) != 1 or shape[0] % spec.kernel:
                raise ValueError(f"voting pool of {spec.kernel} does not divide "
                                 f"feature count {shape}")
            voting = (spec.kernel, spec.stride)
            continue
        if spec.kind == CONV:
            if len(shape) != 3:
                raise ValueError(f"layer {index}: conv requires (C, H, W) input, "
                                 f"have {shape}")
            layer = ConvLayer(shape[0], spec.out_channels, spec.kernel,
                              spec.stride, dtype, rng)
            shape = (spec.out_channels, layer.output_size(shape[1]),
                     layer.output_size(shape[2]))
        elif spec.kind == BATCH_NORM:
            layer = BatchNormLayer(shape[0], dtype)
        elif spec.kind == MAX_POOL:
            layer = MaxPoolLayer(spec.kernel, spec.stride)
            if len(shape) != 3:
                raise ValueError(f"layer {index}: max pool requires (C, H, W) "
                                 f"input, have {shape}")
            shape = (shape[0], layer.output_size(shape[1]),
                     layer.output_size(shape[2]))
        elif spec.kind == DROPOUT:
            rate = spec.rate if spec.rate is not None else DEFAULT_DROPOUT_RATE
            if rates is not None and dropout_index < len(rates):
                rate = rates[dropout_index]
            dropout_index += 1
            layer = DropoutLayer(rate)
        elif spec.kind == FULLY_CONNECTED:
            fan_in = int(np.prod(shape))
            layer = FCLayer(fan_in, spec.features, dtype, rng)
            shape = (spec.features,)
        elif spec.kind == SPIKING:
            params = overrides.get(spec.neuron) or default_neuron_params(spec.neuron, tau)
            layer = SpikingLayer(spec.neuron, params)
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
        layers.append((name, layer))

    if len(shape) != 1:
        shape = (int(np.prod(shape)),)
    return Network(specs, layers, tuple(input_shape), shape[0], voting)


def voting_decode(spikes_seq: np.ndarray, kernel: int = 10,
                  stride: int = 10) -> np.ndarray:
    """Mean firing rate over time, then non-overlapping average pooling.

    Input (T, N, F); returns class scores (N, F // kernel).  Callers take
    ``np.argmax`` over the result, whose first-occurrence rule makes the
    lowest index win ties.
    """
    if kernel != stride:
        raise ValueError("voting pool requires kernel == stride")
    if kernel < 1:
        raise ValueError(f"kernel must be >= 1, got {kernel}")
    rates = spikes_seq.mean(axis=0)
    n, f = rates.shape
    if f % kernel:
        raise ValueError(f"feature count {f} is not divisible by pool {kernel}")
    return rates.reshape(n, f // kernel, kernel).mean(axis=2)


def mse_rate_loss(spikes_seq: np.ndarray, targets: np.ndarray,
                  pool: int = 1) -> tuple[float, np.ndarray]:
    """Mean squared error between voted firing rates and a one-hot target.

    Returns the scalar loss (mean over samples and classes) and its gradient
    with respect to every timestep's spikes; the time average distributes
    1/T uniformly.
    """
    t, n, f = spikes_seq.shape
    scores = voting_decode(spikes_seq, pool, pool)
    classes = scores.shape[1]
    targets = np.asarray(targets)
    if targets.shape != (n,) or targets.min() < 0 or targets.max() >= classes:
        raise ValueError(f"targets must be {n} class indices below {classes}")
    onehot = np.zeros_like(scores)
    onehot[np.arange(n), targets] = 1.0
    diff = scores - onehot
    loss = float(np.mean(diff * diff))
    g_scores = 2.0 * diff / (n * classes)
    g_rates = np.repeat(g_scores / pool, pool, axis=1)
    grad_seq = np.broadcast_to(g_rates / t, spikes_seq.shape).astype(spikes_seq.dtype)
    return loss, grad_seq.copy()
