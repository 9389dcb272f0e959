"""LSTM label predictor with previous-utterance state carry-over."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics.layers import Embedding, Linear, LSTMCell, Module
from .numerics.rng import Rng
from .numerics.tensor import Parameter, Tensor, concat, stack

BLANK = 0


@dataclass
class PredictorConfig:
    embed_dim: int = 300
    hidden: int = 300
    use_context: bool = True


class Predictor(Module):
    """Each step consumes ``[embedding(y_u) ; c]`` projected to the LSTM input,
    where ``c`` is the previous utterance's final hidden state (zeros if none)."""

    def __init__(self, vocab_size: int, cfg: PredictorConfig, rng: Rng):
        self.vocab_size = vocab_size
        self.cfg = cfg
        self.embed = Embedding(vocab_size, cfg.embed_dim, rng)
        self.start = Parameter(rng.normal((cfg.embed_dim,), 0.1))
        self.in_proj = Linear(cfg.embed_dim + cfg.hidden, cfg.hidden, rng)
        self.lstm = LSTMCell(cfg.hidden, cfg.hidden, rng)

    def initial_state(self, batch: int, dtype=np.float64) -> tuple[Tensor, Tensor]:
        z = np.zeros((batch, self.cfg.hidden), dtype=dtype)
        return Tensor(z), Tensor(z.copy())

    def step(self, emb: Tensor, ctx: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        x = self.in_proj(concat([emb, ctx], axis=-1))
        return self.lstm(x, state)

    def forward(self, labels: np.ndarray, prev_state: np.ndarray | None = None
                ) -> tuple[Tensor, np.ndarray]:
        """``labels [B, U]`` (pad with any valid id) -> outputs ``[B, U+1, P]``.

        Output ``u`` summarises the start symbol and ``y_1..y_u``. Also returns
        the hidden state of every step so callers can pick each row's final one.
        """
        labels = np.asarray(labels, dtype=int)
        if labels.ndim == 1:
            out, hs = self.forward(labels[None], None if prev_state is None else np.asarray(prev_state)[None])
            return out.reshape(*out.shape[1:]), hs[0]
        B, U = labels.shape
        if labels.size and (labels.min() < 0 or labels.max() >= self.vocab_size):
            raise IndexError(f"label id outside vocabulary of {self.vocab_size}")
        dtype = self.start.dtype
        c = np.zeros((B, self.cfg.hidden), dtype=dtype) if prev_state is None or not self.cfg.use_context \
            else np.asarray(prev_state, dtype=dtype)
        ctx = Tensor(c)
        state = self.initial_state(B, dtype)
        start = self.start.reshape(1, -1) * Tensor(np.ones((B, 1), dtype=dtype))
        outs = []
        state = self.step(start, ctx, state)
        outs.append(state[0])
        if U:
            embs = self.embed(labels)  # [B, U, E]
            for u in range(U):
                state = self.step(embs[:, u], ctx, state)
                outs.append(state[0])
        out = stack(outs, axis=1)
        return out, out.data


def predict_sequence(predictor: Predictor, labels, prev_state=None) -> tuple[Tensor, np.ndarray]:
    """Single utterance: ``(f_0..f_U [U+1, P], final hidden state [P])``."""
    out, hs = predictor(np.asarray(labels, dtype=int), prev_state)
    return out, np.array(hs[-1], copy=True)
