"""Differentiable primitives composed by the model layers."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _sigmoid, as_tensor, concat, matmul

EPS = 1e-5


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-stabilised softmax. Masked-out entries (``mask`` False) get probability 0."""
    data = x.data
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("softmax received non-finite input")
    if mask is not None:
        data = np.where(mask, data, -np.inf)
    shifted = data - data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._result(y, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    data = x.data
    shifted = data - data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(y, (x,), bw)


def relu(x: Tensor) -> Tensor:
    return x.relu()


def swish(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s

    def bw(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return Tensor._result(out, (x,), bw)


def glu(x: Tensor) -> Tensor:
    """Split the last axis into halves ``a, b`` and return ``a * sigmoid(b)``."""
    n = x.shape[-1]
    if n % 2:
        raise ShapeError(f"glu needs an even last axis, got {x.shape}")
    h = n // 2
    a, b = x.data[..., :h], x.data[..., h:]
    s = _sigmoid(b)

    def bw(g):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=-1),)

    return Tensor._result(a * s, (x,), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else out + bias


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = EPS) -> Tensor:
    if x.shape[-1] != gain.shape[-1]:
        raise ShapeError(f"layernorm: input {x.shape} vs gain {gain.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    n = x.shape[-1]

    def bw(g):
        gx = gxhat = None
        gxhat = g * gain.data
        if x.requires_grad:
            gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True) / n)
        red = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=red) if gain.requires_grad else None
        gb = g.sum(axis=red) if bias.requires_grad else None
        return gx, gg, gb

    return Tensor._result(out, (x, gain, bias), bw)


class BatchNormState:
    """Running statistics for :func:`batchnorm` over a channel (last) axis."""

    def __init__(self, channels: int, momentum: float = 0.1):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum


def batchnorm(x: Tensor, gain: Tensor, bias: Tensor, state: BatchNormState, training: bool,
              mask: np.ndarray | None = None, eps: float = EPS) -> Tensor:
    """Normalise the last axis. In training, statistics pool every other axis
    (restricted to ``mask`` positions when given) and update the running estimates."""
    c = x.shape[-1]
    if c != gain.shape[-1] or c != state.running_mean.shape[0]:
        raise ShapeError(f"batchnorm: input {x.shape} vs {c} channels expected {gain.shape}")
    if not training:
        inv = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (x.data - state.running_mean) * inv
        out = (xhat * gain.data + bias.data).astype(x.dtype)
        red = tuple(range(x.ndim - 1))

        def bw_eval(g):
            return (g * gain.data * inv,
                    (g * xhat).sum(axis=red) if gain.requires_grad else None,
                    g.sum(axis=red) if bias.requires_grad else None)

        return Tensor._result(out, (x, gain, bias), bw_eval)

    red = tuple(range(x.ndim - 1))
    if mask is None:
        w = np.ones(x.shape[:-1] + (1,), dtype=x.dtype)
    else:
        w = np.asarray(mask, dtype=x.dtype).reshape(x.shape[:-1] + (1,))
    n = max(w.sum(), 1.0)
    mu = (x.data * w).sum(axis=red) / n
    xc = x.data - mu
    var = (xc * xc * w).sum(axis=red) / n
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    m = state.momentum
    unbiased = var * n / max(n - 1.0, 1.0)
    state.running_mean = (1 - m) * state.running_mean + m * mu
    state.running_var = (1 - m) * state.running_var + m * unbiased

    def bw(g):
        gxhat = g * gain.data
        gx = None
        if x.requires_grad:
            # masked positions still produce outputs from the shared statistics,
            # so their gradients enter the sums; only valid positions move mu/var
            s1 = gxhat.sum(axis=red) / n
            s2 = (gxhat * xhat).sum(axis=red) / n
            gx = inv * (gxhat - w * (s1 + xhat * s2))
        gg = (g * xhat).sum(axis=red) if gain.requires_grad else None
        gb = g.sum(axis=red) if bias.requires_grad else None
        return gx, gg, gb

    return Tensor._result(out, (x, gain, bias), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep


def conv1d_pointwise(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Kernel-width-1 convolution over ``[..., T, C_in]``: a per-frame linear map."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"pointwise conv: input {x.shape} vs kernel {weight.shape}")
    return linear(x, weight, bias)


def conv1d_depthwise(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     padding: str = "same") -> Tensor:
    """Per-channel convolution over time for ``x: [..., T, C]`` and ``weight: [K, C]``.

    ``padding`` is ``"same"`` (symmetric, K odd) or ``"causal"`` (K-1 zeros on the left).
    """
    K, C = weight.shape
    T = x.shape[-2]
    if x.shape[-1] != C:
        raise ShapeError(f"depthwise conv: input {x.shape} vs kernel {weight.shape}")
    if padding == "same":
        if K % 2 == 0:
            raise ShapeError(f"symmetric depthwise conv needs an odd kernel, got {K}")
        left, right = K // 2, K // 2
    elif padding == "causal":
        left, right = K - 1, 0
    else:
        raise ValueError(f"unknown padding mode {padding!r}")
    if K > T + left + right:
        raise ShapeError(f"kernel width {K} exceeds padded input length {T + left + right}")
    widths = [(0, 0)] * (x.ndim - 2) + [(left, right), (0, 0)]
    xp = np.pad(x.data, widths)
    # windows: [..., T, C, K]
    win = sliding_window_view(xp, K, axis=-2)
    out = np.einsum("...tck,kc->...tc", win, weight.data)
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[..., k:k + T, :] += g * weight.data[k]
            gx = gxp[..., left:left + T, :]
        if weight.requires_grad:
            gw = np.einsum("ntck,ntc->kc", win.reshape(-1, T, C, K), g.reshape(-1, T, C))
        if bias is not None and bias.requires_grad:
            gb = g.reshape(-1, C).sum(axis=0)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, bw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 2, padding: int = 1) -> Tensor:
    """2-D convolution, ``x: [B, C_in, H, W]``, ``weight: [C_out, C_in, kh, kw]``."""
    B, Cin, H, W = x.shape
    Cout, Cin2, kh, kw = weight.shape
    if Cin != Cin2:
        raise ShapeError(f"conv2d: input {x.shape} vs kernel {weight.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} wider than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    # [B, Cin, Ho, Wo, kh, kw]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    out = np.einsum("bchwij,ocij->bohw", win, weight.data, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def bw(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.einsum("bohw,oc->bchw", g, weight.data[:, :, i, j], optimize=True)
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += contrib
            gx = gxp[:, :, padding:padding + H, padding:padding + W]
        if weight.requires_grad:
            gw = np.einsum("bchwij,bohw->ocij", win, g, optimize=True)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, bw)


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids)
    V = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"token id out of range for vocabulary of {V}: {ids.min()}..{ids.max()}")
    return weight[ids]


def lstm_cell(x: Tensor, state: tuple[Tensor, Tensor], w_x: Tensor, w_h: Tensor,
              b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step. Gate order along the 4H axis: input, forget, cell, output."""
    h, c = state
    H = h.shape[-1]
    z = matmul(x, w_x) + matmul(h, w_h) + b
    i = z[..., 0:H].sigmoid()
    f = z[..., H:2 * H].sigmoid()
    g = z[..., 2 * H:3 * H].tanh()
    o = z[..., 3 * H:4 * H].sigmoid()
    c_new = f * c + i * g
    h_new = o * c_new.tanh()
    return h_new, c_new


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    s = np.exp(x.data - m).sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)

    def bw(g):
        return (np.expand_dims(g, axis) * np.exp(x.data - np.expand_dims(out, axis)),)

    return Tensor._result(out, (x,), bw)


__all__ = [
    "softmax", "log_softmax", "relu", "swish", "glu", "linear", "layernorm", "batchnorm",
    "BatchNormState", "dropout", "conv1d_pointwise", "conv1d_depthwise", "conv2d",
    "embedding", "lstm_cell", "logsumexp", "concat", "as_tensor",
]
