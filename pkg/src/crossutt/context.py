"""Cross-utterance context: the detached per-slot cache, frame-level fusion
and attention-pooled compression of previous utterances' encoder states."""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import functional as F
from .numerics.layers import BatchNorm, Module
from .numerics.rng import Rng
from .numerics.tensor import Parameter, ShapeError, Tensor, concat, no_grad, stack


class AttentionPool(Module):
    """Compress ``[T, D]`` history into ``[L, D]``.

    Scores ``E h^T`` go through relu and a batchnorm over the L channels, then a
    softmax over time; each output row is the resulting convex combination of
    the input frames. The history is always treated as a constant.
    """

    def __init__(self, dim: int, L: int, rng: Rng):
        if L < 1:
            raise ValueError("pool size L must be >= 1")
        # small init keeps untrained pooling rows close to uniform
        self.E = Parameter(rng.normal((L, dim), 1.0 / (4.0 * math.sqrt(dim))))
        self.bn = BatchNorm(L)
        self.L = L

    def forward(self, h, mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
        """``h: [T, D]`` or ``[N, T, D]``; ``mask [N, T]`` marks valid frames.

        Returns pooled rows ``[.., L, D]`` and the ``[.., L, T]`` weight matrix.
        """
        data = h.data if isinstance(h, Tensor) else np.asarray(h)
        single = data.ndim == 2
        if single:
            data = data[None]
            mask = None if mask is None else np.asarray(mask)[None]
        if data.shape[-1] != self.E.shape[1]:
            raise ShapeError(f"pooling: history dim {data.shape[-1]} vs projection {self.E.shape}")
        if data.shape[1] < 1:
            raise ShapeError("pooling needs at least one history frame")
        hist = Tensor(data)  # stop-gradient
        scores = (hist @ self.E.T).relu()  # [N, T, L]
        scores = self.bn(scores, mask=mask)
        scores = scores.transpose(0, 2, 1)  # [N, L, T]
        smask = None if mask is None else np.broadcast_to(np.asarray(mask, bool)[:, None, :], scores.shape)
        weights = F.softmax(scores, axis=-1, mask=smask)
        pooled = weights @ hist
        if single:
            return pooled.reshape(*pooled.shape[1:]), weights.data[0]
        return pooled, weights.data


def attention_pool(h, pool: AttentionPool, training: bool = False) -> tuple[Tensor, np.ndarray]:
    pool.train(training)
    return pool(h)


def fuse_frame_concat(x_hat: Tensor, cached: Sequence) -> Tensor:
    """Key/value source: cached rows (oldest first, detached) stacked above ``x_hat``."""
    return _fuse(x_hat, cached)


def fuse_pooled(x_hat: Tensor, cached_pooled: Sequence) -> Tensor:
    """Same contract as :func:`fuse_frame_concat` with fixed ``[L, D]`` entries."""
    return _fuse(x_hat, cached_pooled)


def _fuse(x_hat: Tensor, cached: Sequence) -> Tensor:
    D = x_hat.shape[-1]
    parts = []
    for c in cached:
        arr = c.data if isinstance(c, Tensor) else np.asarray(c)
        if arr.shape[-1] != D:
            raise ShapeError(f"cached context dim {arr.shape[-1]} != {D}")
        parts.append(Tensor(arr))
    if not parts:
        return x_hat
    return concat(parts + [x_hat], axis=-2)


@dataclass
class CacheEntry:
    clip_id: str
    layers: dict[int, np.ndarray]
    pooled: bool
    predictor_state: np.ndarray | None = None
    weights: dict[int, np.ndarray] = field(default_factory=dict)


class ContextCache:
    """Per-slot ring buffer of the last ``n_prev`` utterances' detached states."""

    def __init__(self, n_prev: int = 1):
        if n_prev < 1:
            raise ValueError("n_prev must be >= 1")
        self.n_prev = n_prev
        self.slots: dict[int, deque[CacheEntry]] = {}

    def reset(self, slot: int) -> None:
        self.slots.pop(slot, None)

    def clear(self) -> None:
        self.slots.clear()

    def update(self, slot: int, clip_id: str, layer_outputs: dict[int, np.ndarray],
               predictor_state: np.ndarray | None = None,
               poolers: dict[int, AttentionPool] | None = None) -> CacheEntry:
        """Store a detached snapshot. With ``poolers`` the per-layer states are
        pooled first (under the current parameters, no gradient)."""
        layers = {}
        weights = {}
        for l, h in layer_outputs.items():
            arr = np.array(h.data if isinstance(h, Tensor) else h, copy=True)
            if poolers is not None:
                with no_grad():
                    pooled, w = poolers[l](arr)
                arr = np.array(pooled.data, copy=True)
                weights[l] = w
            layers[l] = arr
        state = None
        if predictor_state is not None:
            ps = predictor_state.data if isinstance(predictor_state, Tensor) else predictor_state
            state = np.array(ps, copy=True)
        entry = CacheEntry(clip_id, layers, poolers is not None, state, weights)
        buf = self.slots.setdefault(slot, deque(maxlen=self.n_prev))
        buf.append(entry)
        return entry

    def read(self, slot: int, clip_id: str) -> list[CacheEntry]:
        return [e for e in self.slots.get(slot, ()) if e.clip_id == clip_id]

    def arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> array view for checkpointing."""
        out = {}
        for slot, buf in self.slots.items():
            for k, e in enumerate(buf):
                for l, arr in e.layers.items():
                    out[f"cache.{slot}.{k}.layer.{l}"] = arr
                if e.predictor_state is not None:
                    out[f"cache.{slot}.{k}.pred"] = e.predictor_state
        return out

    def describe(self) -> list[dict]:
        return [{"slot": slot, "index": k, "clip_id": e.clip_id, "pooled": e.pooled,
                 "layers": sorted(e.layers), "pred": e.predictor_state is not None}
                for slot, buf in self.slots.items() for k, e in enumerate(buf)]

    @classmethod
    def restore(cls, n_prev: int, meta: list[dict], arrays: dict[str, np.ndarray]) -> "ContextCache":
        cache = cls(n_prev)
        for m in sorted(meta, key=lambda m: (m["slot"], m["index"])):
            slot, k = m["slot"], m["index"]
            layers = {l: arrays[f"cache.{slot}.{k}.layer.{l}"] for l in m["layers"]}
            pred = arrays.get(f"cache.{slot}.{k}.pred") if m["pred"] else None
            cache.slots.setdefault(slot, deque(maxlen=n_prev)).append(
                CacheEntry(m["clip_id"], layers, m["pooled"], pred))
        return cache


def _pad_rows(arrs: list[np.ndarray], dim: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    n = max((a.shape[0] for a in arrs), default=0)
    out = np.zeros((len(arrs), n, dim), dtype=dtype)
    for i, a in enumerate(arrs):
        out[i, :a.shape[0]] = a
    return out, np.array([a.shape[0] for a in arrs], dtype=int)


def assemble_context(entries: list[list[CacheEntry]], mode: str, layers: Sequence[int], dim: int,
                     poolers: dict[int, AttentionPool] | None = None, dtype=np.float64
                     ) -> dict[int, tuple[Tensor, np.ndarray]]:
    """Build per-layer padded context ``(rows [B, C, D], counts [B])`` for a batch.

    ``entries[b]`` are the cache entries served to batch row ``b``, oldest first.
    Raw entries in pooled mode are pooled here with the current parameters so
    the pooling projection receives gradient.
    """
    out: dict[int, tuple[Tensor, np.ndarray]] = {}
    if mode == "none" or not any(entries):
        return out
    for l in layers:
        if mode == "frame_concat":
            rows = [np.concatenate([e.layers[l] for e in es], axis=0) if es else np.zeros((0, dim))
                    for es in entries]
            padded, counts = _pad_rows(rows, dim, dtype)
            out[l] = (Tensor(padded), counts)
            continue
        # pooled
        raw = [(b, k, e.layers[l]) for b, es in enumerate(entries) for k, e in enumerate(es) if not e.pooled]
        pooled_raw: dict[tuple[int, int], Tensor] = {}
        if raw:
            hist, lens = _pad_rows([r[2] for r in raw], dim, dtype)
            mask = np.arange(hist.shape[1])[None, :] < lens[:, None]
            pooled, _ = poolers[l](hist, mask)
            for n, (b, k, _) in enumerate(raw):
                pooled_raw[(b, k)] = pooled[n]
        L = poolers[l].L if poolers else next(e.layers[l].shape[0] for es in entries for e in es)
        C = max(len(es) for es in entries) * L
        per_slot = []
        for b, es in enumerate(entries):
            parts = [pooled_raw[(b, k)] if not e.pooled else Tensor(e.layers[l]) for k, e in enumerate(es)]
            if C - len(es) * L:
                parts.append(Tensor(np.zeros((C - len(es) * L, dim), dtype=dtype)))
            per_slot.append(concat(parts, axis=0))
        out[l] = (stack(per_slot, axis=0), np.array([len(es) * L for es in entries], dtype=int))
    return out


def predictor_context(entries: list[list[CacheEntry]], hidden: int, dtype=np.float64) -> np.ndarray:
    """Newest cached predictor state per batch row; zeros when absent."""
    out = np.zeros((len(entries), hidden), dtype=dtype)
    for b, es in enumerate(entries):
        for e in reversed(es):
            if e.predictor_state is not None:
                out[b] = e.predictor_state
                break
    return out


def context_values_per_layer(entry: CacheEntry, layer: int) -> int:
    return int(entry.layers[layer].size)


def write_heatmap_csv(path, weights: np.ndarray, tokens: Sequence[str] | None = None) -> None:
    """``weights [L, T]``: one row per pooled slot, one column per history frame."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    L, T = weights.shape
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame"] + list(range(T)))
        w.writerow(["token"] + (list(tokens) if tokens is not None else [""] * T))
        for i in range(L):
            w.writerow([i] + [repr(float(v)) for v in weights[i]])


def read_heatmap_csv(path) -> tuple[np.ndarray, list[str]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    tokens = rows[1][1:]
    weights = np.array([[float(v) for v in r[1:]] for r in rows[2:]])
    return weights, tokens
