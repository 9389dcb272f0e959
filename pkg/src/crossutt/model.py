"""The full transducer: encoder + pooling layers + predictor + joint network."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ModelConfig
from .context import AttentionPool, CacheEntry, assemble_context, predictor_context
from .data.corpus import Corpus
from .encoder import ConformerEncoder
from .numerics import functional as F
from .numerics.layers import Module
from .numerics.rng import Rng
from .numerics.tensor import Tensor, default_dtype, no_grad
from .predictor import Predictor
from .transducer import JointNetwork, greedy_decode, rnnt_loss


@dataclass
class Batch:
    utt_indices: list[int]
    feats: np.ndarray  # [B, T_raw, F]
    feat_lens: np.ndarray
    labels: np.ndarray  # [B, U_max], padded with 1
    label_lens: np.ndarray

    @property
    def num_labels(self) -> int:
        return int(self.label_lens.sum())


def make_batch(corpus: Corpus, indices: Sequence[int], dtype=np.float64) -> Batch:
    utts = [corpus.utterances[i] for i in indices]
    B = len(utts)
    T = max(u.num_frames for u in utts)
    Fdim = utts[0].features.shape[1]
    U = max(len(u.labels) for u in utts)
    feats = np.zeros((B, T, Fdim), dtype=dtype)
    labels = np.ones((B, U), dtype=int)
    for b, u in enumerate(utts):
        feats[b, :u.num_frames] = u.features
        labels[b, :len(u.labels)] = u.labels
    return Batch(list(indices), feats, np.array([u.num_frames for u in utts]), labels,
                 np.array([len(u.labels) for u in utts]))


@dataclass
class ForwardResult:
    losses: Tensor  # [B] per-utterance negative log-likelihood
    layer_outputs: list[Tensor]
    out_lens: np.ndarray
    pred_hidden: np.ndarray  # [B, U_max+1, P]
    contexts: dict


class ContextualTransducer(Module):
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        rng = Rng(cfg.seed)
        with default_dtype(cfg.precision):
            self.encoder = ConformerEncoder(cfg.encoder, rng)
            layers = cfg.encoder.active_context_layers()
            self.poolers: list[AttentionPool] = []
            if cfg.context_mode == "pooled":
                n = 1 if cfg.context.share_pooling else len(layers)
                self.poolers = [AttentionPool(cfg.encoder.dim, cfg.context.pool_L, rng) for _ in range(n)]
            self.predictor = Predictor(cfg.vocab_size, cfg.predictor, rng)
            self.joint = JointNetwork(cfg.encoder.dim, cfg.predictor.hidden, cfg.joint_dim,
                                      cfg.vocab_size, rng)
        self.name_parameters()

    @property
    def context_layers(self) -> tuple[int, ...]:
        return self.cfg.encoder.active_context_layers()

    @property
    def dtype(self):
        return np.dtype(self.cfg.precision)

    def pooler_map(self) -> dict[int, AttentionPool]:
        if not self.poolers:
            return {}
        if self.cfg.context.share_pooling:
            return {l: self.poolers[0] for l in self.context_layers}
        return dict(zip(self.context_layers, self.poolers))

    def contexts_for(self, entries: list[list[CacheEntry]]) -> dict:
        return assemble_context(entries, self.cfg.context_mode, self.context_layers,
                                self.cfg.encoder.dim, self.pooler_map(), self.dtype)

    def forward(self, batch: Batch, entries: list[list[CacheEntry]] | None = None) -> ForwardResult:
        entries = entries or [[] for _ in batch.utt_indices]
        contexts = self.contexts_for(entries)
        enc, out_lens, layers = self.encoder(Tensor(batch.feats.astype(self.dtype)), batch.feat_lens, contexts)
        pstate = predictor_context(entries, self.cfg.predictor.hidden, self.dtype) \
            if self.cfg.predictor.use_context else None
        f, hs = self.predictor(batch.labels, pstate)
        logits = self.joint(enc, f)
        lp = F.log_softmax(logits, axis=-1)
        losses = rnnt_loss(lp, batch.labels, out_lens, batch.label_lens)
        return ForwardResult(losses, layers, out_lens, hs, contexts)

    def encode(self, batch: Batch, entries: list[list[CacheEntry]] | None = None):
        entries = entries or [[] for _ in batch.utt_indices]
        contexts = self.contexts_for(entries)
        return self.encoder(Tensor(batch.feats.astype(self.dtype)), batch.feat_lens, contexts)

    def decode(self, batch: Batch, entries: list[list[CacheEntry]] | None = None
               ) -> tuple[list[list[int]], list[np.ndarray], list[Tensor], np.ndarray]:
        """Greedy hypotheses, final predictor states, per-layer outputs, lengths."""
        entries = entries or [[] for _ in batch.utt_indices]
        with no_grad():
            enc, out_lens, layers = self.encode(batch, entries)
            pstate = predictor_context(entries, self.cfg.predictor.hidden, self.dtype)
            hyps, states = [], []
            for b in range(len(batch.utt_indices)):
                prev = pstate[b] if self.cfg.predictor.use_context and any(
                    e.predictor_state is not None for e in entries[b]) else None
                hyp, st = greedy_decode(enc.data[b, :out_lens[b]], self.predictor, self.joint, prev,
                                        self.cfg.max_symbols_per_frame)
                hyps.append(hyp)
                states.append(st)
        return hyps, states, layers, out_lens

    def reference_state(self, labels: Sequence[int], prev_state: np.ndarray | None) -> np.ndarray:
        """Final predictor hidden state after consuming reference ``labels``."""
        with no_grad():
            _, hs = self.predictor(np.asarray(labels, dtype=int), prev_state)
        return np.array(hs[-1], copy=True)
