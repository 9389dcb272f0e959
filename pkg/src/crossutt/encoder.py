"""Conformer encoder with per-layer cross-utterance key/value context."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import functional as F
from .numerics.layers import BatchNorm, DepthwiseConv1d, Dropout, LayerNorm, Linear, Module
from .numerics.rng import Rng, xavier_uniform
from .numerics.tensor import Parameter, ShapeError, Tensor, as_tensor, concat

CONTEXT_MODES = ("none", "frame_concat", "pooled")
SUBSAMPLE_MIN_FRAMES = 7  # receptive field of two 3-wide stride-2 convolutions


class TooShortError(ValueError):
    pass


@dataclass
class EncoderConfig:
    input_dim: int = 80
    num_blocks: int = 12
    heads: int = 8
    dim: int = 512
    ffn_dim: int = 2048
    conv_kernel: int = 31
    subsample_channels: int = 64
    streaming: bool = False
    lookahead: int = 1
    context_mode: str = "none"
    context_layers: tuple[int, ...] | None = None
    max_positions: int = 2048
    dropout: float = 0.1

    def validate(self) -> None:
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by {self.heads} heads")
        if self.conv_kernel % 2 == 0:
            raise ValueError(f"depthwise kernel width must be odd, got {self.conv_kernel}")
        if self.context_mode not in CONTEXT_MODES:
            raise ValueError(f"context_mode must be one of {CONTEXT_MODES}, got {self.context_mode!r}")
        if self.lookahead < 0:
            raise ValueError("lookahead must be >= 0")
        for layer in self.active_context_layers():
            if not 0 <= layer < self.num_blocks:
                raise ValueError(f"context layer {layer} outside 0..{self.num_blocks - 1}")

    def active_context_layers(self) -> tuple[int, ...]:
        if self.context_mode == "none":
            return ()
        if self.context_layers is None:
            return tuple(range(self.num_blocks))
        return tuple(sorted(self.context_layers))


def subsampled_length(t: int) -> int:
    t1 = -(-t // 2)
    return -(-t1 // 2)


def build_streaming_mask(T: int, C: int, lookahead: int) -> np.ndarray:
    """[T x (C+T)] boolean mask: context columns always visible, current
    column ``s`` visible from row ``t`` iff ``s <= t + lookahead``."""
    cur = np.arange(T)[None, :] <= np.arange(T)[:, None] + lookahead
    return np.concatenate([np.ones((T, C), dtype=bool), cur], axis=1)


def build_attention_mask(lengths: Sequence[int], T: int, ctx_lengths: Sequence[int] | None, C: int,
                         streaming: bool, lookahead: int) -> np.ndarray:
    """Batched mask ``[B, 1, T, C+T]`` combining padding, context validity and streaming."""
    lengths = np.asarray(lengths)
    B = len(lengths)
    key_ok = np.arange(T)[None, :] < lengths[:, None]  # [B, T]
    cur = np.broadcast_to(key_ok[:, None, :], (B, T, T))
    if streaming:
        cur = cur & (np.arange(T)[None, :] <= np.arange(T)[:, None] + lookahead)[None]
    if C:
        ctx_lengths = np.zeros(B, dtype=int) if ctx_lengths is None else np.asarray(ctx_lengths)
        ctx_ok = np.arange(C)[None, :] < ctx_lengths[:, None]
        ctx = np.broadcast_to(ctx_ok[:, None, :], (B, T, C))
        full = np.concatenate([ctx, cur], axis=2)
    else:
        full = np.array(cur)
    return full[:, None, :, :]


class Conv2dSubsampler(Module):
    """Two stride-2 3x3 convolutions with ReLU, then a projection to ``dim``.

    Time and frequency both shrink as ``ceil(n / 2)`` per stage.
    """

    def __init__(self, input_dim: int, channels: int, dim: int, rng: Rng):
        self.w1 = Parameter(xavier_uniform(rng, (channels, 1, 3, 3), 9, channels * 9))
        self.b1 = Parameter(np.zeros(channels))
        self.w2 = Parameter(xavier_uniform(rng, (channels, channels, 3, 3), channels * 9, channels * 9))
        self.b2 = Parameter(np.zeros(channels))
        f_out = subsampled_length(input_dim)
        self.proj = Linear(channels * f_out, dim, rng)
        self.input_dim = input_dim

    def forward(self, feats: Tensor, lengths: Sequence[int]) -> tuple[Tensor, np.ndarray]:
        B, T, Fdim = feats.shape
        if Fdim != self.input_dim:
            raise ShapeError(f"feature dim {Fdim} != configured {self.input_dim}")
        lengths = np.asarray(lengths)
        if lengths.min() < SUBSAMPLE_MIN_FRAMES:
            raise TooShortError(f"utterance of {lengths.min()} frames is shorter than the "
                                f"subsampler receptive field ({SUBSAMPLE_MIN_FRAMES})")
        x = feats.reshape(B, 1, T, Fdim)
        x = F.conv2d(x, self.w1, self.b1).relu()
        len1 = -(-lengths // 2)
        t1 = x.shape[2]
        m1 = (np.arange(t1)[None, :] < len1[:, None]).astype(x.dtype)
        x = x * m1[:, None, :, None]
        x = F.conv2d(x, self.w2, self.b2).relu()
        len2 = -(-len1 // 2)
        _, C, T2, F2 = x.shape
        x = x.transpose(0, 2, 1, 3).reshape(B, T2, C * F2)
        return self.proj(x), len2


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: Rng, dropout: float):
        self.l1 = Linear(dim, hidden, rng)
        self.l2 = Linear(hidden, dim, rng)
        self.drop1 = Dropout(dropout)
        self.drop2 = Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        return self.drop2(self.l2(self.drop1(F.swish(self.l1(x)))))


class MultiHeadAttention(Module):
    """Queries from the current utterance; keys/values from ``source``
    (context rows prepended to the current rows)."""

    def __init__(self, dim: int, heads: int, rng: Rng, dropout: float):
        self.w_q = Linear(dim, dim, rng)
        self.w_k = Linear(dim, dim, rng)
        self.w_v = Linear(dim, dim, rng)
        self.w_out = Linear(dim, dim, rng)
        self.drop = Dropout(dropout)
        self.heads = heads
        self.last_weights: np.ndarray | None = None

    def forward(self, x: Tensor, source: Tensor, mask: np.ndarray | None) -> Tensor:
        B, T, D = x.shape
        S = source.shape[1]
        H = self.heads
        dk = D // H
        q = self.w_q(x).reshape(B, T, H, dk).transpose(0, 2, 1, 3)
        k = self.w_k(source).reshape(B, S, H, dk).transpose(0, 2, 3, 1)
        v = self.w_v(source).reshape(B, S, H, dk).transpose(0, 2, 1, 3)
        scores = (q @ k) * (1.0 / math.sqrt(dk))
        if mask is not None:
            mask = np.broadcast_to(mask, scores.shape)
        weights = F.softmax(scores, axis=-1, mask=mask)
        self.last_weights = weights.data
        out = (weights @ v).transpose(0, 2, 1, 3).reshape(B, T, D)
        return self.drop(self.w_out(out))


class ConvModule(Module):
    """pointwise -> GLU -> pointwise -> depthwise -> batchnorm -> swish -> pointwise."""

    def __init__(self, dim: int, kernel: int, rng: Rng, causal: bool, dropout: float):
        self.pw1 = Linear(dim, 2 * dim, rng)
        self.pw2 = Linear(dim, dim, rng)
        self.depthwise = DepthwiseConv1d(dim, kernel, rng, causal=causal)
        self.bn = BatchNorm(dim)
        self.pw3 = Linear(dim, dim, rng)
        self.drop = Dropout(dropout)

    def forward(self, x: Tensor, frame_mask: np.ndarray | None) -> Tensor:
        y = self.pw2(F.glu(self.pw1(x)))
        if frame_mask is not None:
            y = y * frame_mask[..., None].astype(y.dtype)
        y = self.depthwise(y)
        y = F.swish(self.bn(y, mask=frame_mask))
        return self.drop(self.pw3(y))


class ConformerBlock(Module):
    def __init__(self, cfg: EncoderConfig, rng: Rng):
        self.ffn1 = FeedForward(cfg.dim, cfg.ffn_dim, rng, cfg.dropout)
        self.mhsa = MultiHeadAttention(cfg.dim, cfg.heads, rng, cfg.dropout)
        self.conv = ConvModule(cfg.dim, cfg.conv_kernel, rng, cfg.streaming, cfg.dropout)
        self.ffn2 = FeedForward(cfg.dim, cfg.ffn_dim, rng, cfg.dropout)
        self.norm = LayerNorm(cfg.dim)

    def forward(self, x: Tensor, context: Tensor | None = None, mask: np.ndarray | None = None,
                frame_mask: np.ndarray | None = None) -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
            if context is not None:
                context = context.reshape(1, *context.shape)
            if mask is not None and mask.ndim == 2:
                mask = mask[None, None]
            if frame_mask is not None:
                frame_mask = frame_mask[None]
        if context is not None and context.shape[-1] != x.shape[-1]:
            raise ShapeError(f"context dim {context.shape[-1]} != model dim {x.shape[-1]}")
        x0 = x + 0.5 * self.ffn1(x)
        source = x0 if context is None or context.shape[1] == 0 else concat([context, x0], axis=1)
        x1 = x0 + self.mhsa(x0, source, mask)
        x2 = x1 + self.conv(x1, frame_mask)
        h = self.norm(x2 + 0.5 * self.ffn2(x2))
        return h.reshape(*h.shape[1:]) if squeeze else h


class ConformerEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: Rng):
        cfg.validate()
        self.cfg = cfg
        self.subsample = Conv2dSubsampler(cfg.input_dim, cfg.subsample_channels, cfg.dim, rng)
        self.pos = Parameter(rng.normal((cfg.max_positions, cfg.dim), 0.02))
        self.drop = Dropout(cfg.dropout)
        self.blocks = [ConformerBlock(cfg, rng) for _ in range(cfg.num_blocks)]

    def forward(self, feats, lengths: Sequence[int],
                contexts: dict[int, tuple[Tensor, np.ndarray]] | None = None
                ) -> tuple[Tensor, np.ndarray, list[Tensor]]:
        """Encode a padded batch ``[B, T_raw, F]``.

        ``contexts`` maps block index to ``(rows [B, C, D], valid_counts [B])``.
        Returns final outputs, subsampled lengths and every block's output.
        """
        feats = as_tensor(feats)
        x, out_len = self.subsample(feats, lengths)
        B, T, _ = x.shape
        if T > self.cfg.max_positions:
            raise ShapeError(f"{T} frames exceed max_positions={self.cfg.max_positions}")
        x = self.drop(x + self.pos[:T])
        frame_mask = np.arange(T)[None, :] < out_len[:, None]
        active = set(self.cfg.active_context_layers())
        contexts = contexts or {}
        no_ctx_mask = build_attention_mask(out_len, T, None, 0, self.cfg.streaming, self.cfg.lookahead)
        outputs = []
        for l, block in enumerate(self.blocks):
            ctx = contexts.get(l) if l in active else None
            if ctx is not None and ctx[0].shape[1] > 0:
                rows, counts = ctx
                mask = build_attention_mask(out_len, T, counts, rows.shape[1],
                                            self.cfg.streaming, self.cfg.lookahead)
                x = block(x, rows, mask, frame_mask)
            else:
                x = block(x, None, no_ctx_mask, frame_mask)
            outputs.append(x)
        return x, out_len, outputs

    def encode_utterance(self, features: np.ndarray, contexts: dict[int, np.ndarray] | None = None
                         ) -> tuple[Tensor, list[Tensor]]:
        """Single-utterance form: ``features [T_raw, F]``, context rows ``[C, D]`` per block."""
        feats = as_tensor(np.asarray(features)[None])
        batched = None
        if contexts:
            batched = {l: (as_tensor(np.asarray(c.data if isinstance(c, Tensor) else c)[None]),
                           np.array([len(c)])) for l, c in contexts.items()}
        out, out_len, layers = self.forward(feats, [features.shape[0]], batched)
        return out.reshape(*out.shape[1:]), [h.reshape(*h.shape[1:]) for h in layers]
