"""Joint network, transducer loss over the alignment lattice, greedy decoding."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics.layers import Linear, Module
from .numerics.rng import Rng
from .numerics.tensor import Tensor, no_grad

BLANK = 0
NEG_INF = -math.inf


class ImpossibleAlignmentError(ValueError):
    pass


class JointNetwork(Module):
    def __init__(self, enc_dim: int, pred_dim: int, joint_dim: int, vocab_size: int, rng: Rng):
        self.enc_proj = Linear(enc_dim, joint_dim, rng)
        self.pred_proj = Linear(pred_dim, joint_dim, rng)
        self.out = Linear(joint_dim, vocab_size, rng)

    def forward(self, h: Tensor, f: Tensor) -> Tensor:
        """``h [B, T, D]``, ``f [B, U+1, P]`` -> logits ``[B, T, U+1, V]``."""
        he = self.enc_proj(h)
        fp = self.pred_proj(f)
        B, T, J = he.shape
        U1 = fp.shape[1]
        g = (he.reshape(B, T, 1, J) + fp.reshape(B, 1, U1, J)).relu()
        return self.out(g)

    def step(self, h_proj: Tensor, f: Tensor) -> Tensor:
        """Logits for one ``(t, u)`` cell given an already projected encoder frame."""
        return self.out((h_proj + self.pred_proj(f)).relu())


def joint(net: JointNetwork, h_t, f_u) -> Tensor:
    """Single-cell joint: ``h_t [D]``, ``f_u [P]`` -> logits ``[V+1]``."""
    h = h_t if isinstance(h_t, Tensor) else Tensor(np.asarray(h_t))
    f = f_u if isinstance(f_u, Tensor) else Tensor(np.asarray(f_u))
    return net(h.reshape(1, 1, -1), f.reshape(1, 1, -1)).reshape(-1)


@dataclass
class Lattice:
    log_probs: np.ndarray  # [T, U+1, V]
    labels: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def log_likelihood(self) -> float:
        T, U1 = self.alpha.shape
        return float(self.alpha[T - 1, U1 - 1] + self.log_probs[T - 1, U1 - 1, BLANK])


def _validate(T: int, labels: np.ndarray) -> None:
    if T < 1:
        if len(labels):
            raise ImpossibleAlignmentError(f"{len(labels)} labels cannot align to 0 frames")
        raise ImpossibleAlignmentError("transducer lattice needs at least one frame")
    if np.any(labels == BLANK):
        raise ValueError("label sequence contains the blank id")


def lattice_alpha(lp: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Forward variables: ``alpha[t, u]`` = log-prob of reaching cell ``(t, u)``."""
    T, U1, _ = lp.shape
    blank = lp[:, :, BLANK].tolist()
    emit = [[float(lp[t, u, labels[u]]) for u in range(U1 - 1)] for t in range(T)]
    la = _logaddexp
    alpha = [[NEG_INF] * U1 for _ in range(T)]
    alpha[0][0] = 0.0
    for t in range(T):
        row, prev = alpha[t], alpha[t - 1] if t else None
        bprev = blank[t - 1] if t else None
        et = emit[t]
        for u in range(U1):
            if t == 0 and u == 0:
                continue
            a = prev[u] + bprev[u] if t else NEG_INF
            b = row[u - 1] + et[u - 1] if u else NEG_INF
            row[u] = la(a, b)
    return np.array(alpha)


def lattice_beta(lp: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Backward variables: ``beta[t, u]`` = log-prob of finishing from ``(t, u)``
    (including the terminal blank)."""
    T, U1, _ = lp.shape
    blank = lp[:, :, BLANK].tolist()
    emit = [[float(lp[t, u, labels[u]]) for u in range(U1 - 1)] for t in range(T)]
    la = _logaddexp
    beta = [[NEG_INF] * U1 for _ in range(T)]
    beta[T - 1][U1 - 1] = blank[T - 1][U1 - 1]
    for t in range(T - 1, -1, -1):
        row, nxt = beta[t], beta[t + 1] if t < T - 1 else None
        bt, et = blank[t], emit[t]
        for u in range(U1 - 1, -1, -1):
            if t == T - 1 and u == U1 - 1:
                continue
            a = nxt[u] + bt[u] if t < T - 1 else NEG_INF
            b = row[u + 1] + et[u] if u < U1 - 1 else NEG_INF
            row[u] = la(a, b)
    return np.array(beta)


def _logaddexp(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def build_lattice(log_probs: np.ndarray, labels) -> Lattice:
    labels = np.asarray(labels, dtype=int)
    lp = np.asarray(log_probs, dtype=np.float64)
    _validate(lp.shape[0], labels)
    if lp.shape[1] != len(labels) + 1:
        raise ValueError(f"lattice has {lp.shape[1]} label positions for {len(labels)} labels")
    return Lattice(lp, labels, lattice_alpha(lp, labels), lattice_beta(lp, labels))


def lattice_grad(lat: Lattice) -> np.ndarray:
    """d(-log P)/d log_probs for one lattice."""
    lp, alpha, beta, labels = lat.log_probs, lat.alpha, lat.beta, lat.labels
    T, U1, _ = lp.shape
    logp = lat.log_likelihood
    g = np.zeros_like(lp)
    # blank transitions (t, u) -> (t+1, u)
    if T > 1:
        g[:-1, :, BLANK] = -np.exp(alpha[:-1] + lp[:-1, :, BLANK] + beta[1:] - logp)
    g[T - 1, U1 - 1, BLANK] = -np.exp(alpha[T - 1, U1 - 1] + lp[T - 1, U1 - 1, BLANK] - logp)
    # label transitions (t, u) -> (t, u+1)
    if U1 > 1:
        u = np.arange(U1 - 1)
        emit = lp[:, u, labels]  # [T, U]
        g[:, u, labels] = -np.exp(alpha[:, :-1] + emit + beta[:, 1:] - logp)
    return g


def rnnt_loss(log_probs: Tensor, labels, t_lengths=None, u_lengths=None) -> Tensor:
    """Per-utterance negative log-likelihood ``[B]``.

    ``log_probs [B, T, U+1, V]`` (or a single ``[T, U+1, V]`` lattice). DP runs
    in float64 regardless of the input precision.
    """
    single = log_probs.ndim == 3
    lp_all = log_probs.data[None] if single else log_probs.data
    B, T, U1, _ = lp_all.shape
    labels = np.asarray(labels, dtype=int)
    if single:
        labels = labels[None]
    t_lengths = np.full(B, T) if t_lengths is None else np.asarray(t_lengths)
    u_lengths = np.full(B, U1 - 1) if u_lengths is None else np.asarray(u_lengths)
    losses = np.zeros(B)
    grads = np.zeros(lp_all.shape, dtype=np.float64)
    for b in range(B):
        tb, ub = int(t_lengths[b]), int(u_lengths[b])
        lab = labels[b, :ub]
        _validate(tb, lab)
        lat = build_lattice(lp_all[b, :tb, :ub + 1], lab)
        losses[b] = -lat.log_likelihood
        grads[b, :tb, :ub + 1] = lattice_grad(lat)
    if single:
        losses, grads = losses[0:1].reshape(()), grads[0]
    losses = losses.astype(log_probs.dtype)

    def bw(g):
        g = np.asarray(g, dtype=np.float64)
        gb = g[..., None, None, None] if not single else g
        return ((gb * grads).astype(log_probs.dtype),)

    return Tensor._result(losses, (log_probs,), bw)


def greedy_decode(h: np.ndarray, predictor, joint_net: JointNetwork, prev_state: np.ndarray | None = None,
                  max_symbols_per_frame: int = 10) -> tuple[list[int], np.ndarray]:
    """Greedy transducer search over encoder frames ``h [T, D]``.

    Returns the hypothesis and the predictor's final hidden state.
    """
    with no_grad():
        hp = joint_net.enc_proj(Tensor(np.asarray(h)))
        dtype = hp.dtype
        P = predictor.cfg.hidden
        ctx = np.zeros((1, P), dtype=dtype) if prev_state is None or not predictor.cfg.use_context \
            else np.asarray(prev_state, dtype=dtype).reshape(1, P)
        ctx = Tensor(ctx)
        state = predictor.initial_state(1, dtype)
        state = predictor.step(predictor.start.reshape(1, -1), ctx, state)
        hyp: list[int] = []
        for t in range(hp.shape[0]):
            emitted = 0
            while emitted < max_symbols_per_frame:
                logits = joint_net.step(hp[t:t + 1], state[0])
                k = int(np.argmax(logits.data[0]))
                if k == BLANK:
                    break
                hyp.append(k)
                emitted += 1
                state = predictor.step(predictor.embed(np.array([k])), ctx, state)
        return hyp, np.array(state[0].data[0], copy=True)
