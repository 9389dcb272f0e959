"""Serialized training loop: cache read -> encode -> predict -> joint -> loss ->
update -> cache refresh."""
from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from ..config import ConfigError, ModelConfig
from ..context import CacheEntry, ContextCache
from ..data.corpus import Corpus
from ..data.serialize import SerializedBatchPlan, SlotStep, serialize
from ..encoder import SUBSAMPLE_MIN_FRAMES
from ..model import Batch, ContextualTransducer, make_batch
from ..numerics.optim import Adam
from .checkpoint import load_checkpoint, save_checkpoint


def check_compatible(cfg: ModelConfig, corpus: Corpus) -> None:
    if len(corpus) == 0:
        raise ConfigError("corpus is empty")
    if corpus.feature_dim != cfg.encoder.input_dim:
        raise ConfigError(f"corpus feature dim {corpus.feature_dim} != encoder.input_dim "
                          f"{cfg.encoder.input_dim}")
    if corpus.vocab and len(corpus.vocab) != cfg.vocab_size:
        raise ConfigError(f"corpus vocabulary has {len(corpus.vocab)} tokens, model expects "
                          f"{cfg.vocab_size}")
    top = max((max(u.labels) for u in corpus.utterances if u.labels), default=0)
    if top >= cfg.vocab_size:
        raise ConfigError(f"label id {top} outside vocabulary of {cfg.vocab_size}")


def store_layers(model: ContextualTransducer, layers, b: int, T_b: int) -> dict[int, np.ndarray]:
    return {l: layers[l].data[b, :T_b] for l in model.context_layers}


class Trainer:
    def __init__(self, cfg: ModelConfig, corpus: Corpus):
        cfg.validate()
        check_compatible(cfg, corpus)
        self.cfg = cfg
        self.corpus = corpus.filter_short(SUBSAMPLE_MIN_FRAMES)
        check_compatible(cfg, self.corpus)
        self.model = ContextualTransducer(cfg)
        self.dropout_gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 17])))
        self.model.set_dropout_rng(self.dropout_gen)
        o = cfg.optim
        self.optim = Adam(self.model.parameters(), o.lr, (o.beta1, o.beta2), o.eps, o.clip_norm)
        self.cache = ContextCache(cfg.context.n_prev)
        self.step_count = 0
        self.epoch = 0
        self.pos = 0
        self.plan = self._plan()
        self.last_contexts: dict = {}

    def _plan(self) -> SerializedBatchPlan:
        return serialize(self.corpus, self.cfg.batch_size, seed=self.cfg.seed + self.epoch)

    def lr(self) -> float:
        o = self.cfg.optim
        if o.warmup_steps and self.step_count < o.warmup_steps:
            return o.lr * (self.step_count + 1) / o.warmup_steps
        return o.lr

    def next_assignments(self) -> list[tuple[int, SlotStep]]:
        row = self.plan.step(self.pos)
        return [(b, s) for b, s in enumerate(row) if s is not None]

    def gather(self, active: list[tuple[int, SlotStep]]) -> list[list[CacheEntry]]:
        """Apply reset markers, then read each active slot's same-clip context."""
        for b, s in active:
            if s.reset:
                self.cache.reset(b)
        return [self.cache.read(b, s.clip_id) for b, s in active]

    def _advance(self) -> None:
        self.pos += 1
        if self.pos >= self.plan.num_steps:
            self.epoch += 1
            self.pos = 0
            self.plan = self._plan()
            self.cache.clear()

    def train_step(self) -> dict:
        active = self.next_assignments()
        entries = self.gather(active)
        batch = make_batch(self.corpus, [s.utt_index for _, s in active], self.model.dtype)
        self.model.train()
        self.optim.zero_grad()
        res = self.model(batch, entries)
        self.last_contexts = res.contexts
        loss = res.losses.sum() * (1.0 / max(batch.num_labels, 1))
        loss.backward()
        lr = self.lr()
        self.optim.step(lr)
        self.refresh_cache(active, batch, res.layer_outputs, res.out_lens, res.pred_hidden)
        self._advance()
        self.step_count += 1
        return {"step": self.step_count, "loss": float(loss.item()), "lr": lr}

    def refresh_cache(self, active, batch: Batch, layers, out_lens, pred_hidden) -> None:
        use_pred = self.cfg.predictor.use_context
        for i, (b, s) in enumerate(active):
            state = pred_hidden[i, batch.label_lens[i]] if use_pred else None
            self.cache.update(b, s.clip_id, store_layers(self.model, layers, i, out_lens[i]), state)

    def run(self, num_steps: int, out_dir=None, checkpoint_every: int = 0) -> list[dict]:
        out = Path(out_dir) if out_dir else None
        if out:
            out.mkdir(parents=True, exist_ok=True)
        records = []
        for _ in range(num_steps):
            t0 = time.monotonic()
            rec = self.train_step()
            wall_ms = (time.monotonic() - t0) * 1000.0
            records.append(rec)
            if out:
                with open(out / "metrics.jsonl", "a") as fh:
                    fh.write(json.dumps(rec) + "\n")
                with open(out / "timing.jsonl", "a") as fh:
                    fh.write(json.dumps({"step": rec["step"], "wall_ms": round(wall_ms, 3)}) + "\n")
                if checkpoint_every and rec["step"] % checkpoint_every == 0:
                    self.save(out / f"step{rec['step']:06d}.ckpt")
        return records

    # -- checkpoints ----------------------------------------------------------
    def save(self, path) -> None:
        arrays = {f"param.{n}": p.data for n, p in self.model.named_parameters()}
        arrays.update({f"buffer.{n}": v for n, v in self.model.named_buffers()})
        arrays.update({f"optim.{k}": v for k, v in self.optim.state_arrays().items()})
        arrays.update(self.cache.arrays())
        meta = {
            "config": self.cfg.to_dict(),
            "step": self.step_count, "epoch": self.epoch, "pos": self.pos,
            "optim_t": self.optim.t,
            "dropout_rng": self.dropout_gen.bit_generator.state,
            "cache": self.cache.describe(),
        }
        save_checkpoint(path, meta, arrays)

    @classmethod
    def load(cls, path, corpus: Corpus) -> "Trainer":
        meta, arrays = load_checkpoint(path)
        cfg = ModelConfig.from_dict(meta["config"])
        tr = cls(cfg, corpus)
        load_model_arrays(tr.model, arrays)
        tr.optim.load_state_arrays({k[len("optim."):]: v for k, v in arrays.items()
                                    if k.startswith("optim.")}, meta["optim_t"])
        tr.dropout_gen.bit_generator.state = meta["dropout_rng"]
        tr.step_count, tr.epoch, tr.pos = meta["step"], meta["epoch"], meta["pos"]
        tr.plan = tr._plan()
        tr.cache = ContextCache.restore(cfg.context.n_prev, meta["cache"], arrays)
        return tr


def load_model_arrays(model: ContextualTransducer, arrays: dict[str, np.ndarray]) -> None:
    for n, p in model.named_parameters():
        key = f"param.{n}"
        if key not in arrays:
            raise KeyError(f"checkpoint lacks parameter {n}")
        if arrays[key].shape != p.shape:
            raise ValueError(f"parameter {n}: checkpoint shape {arrays[key].shape} != {p.shape}")
        p.data[...] = arrays[key]
    for n, _ in list(model.named_buffers()):
        model.set_buffer(n, arrays[f"buffer.{n}"])


def load_model(path) -> ContextualTransducer:
    meta, arrays = load_checkpoint(path)
    model = ContextualTransducer(ModelConfig.from_dict(meta["config"]))
    load_model_arrays(model, arrays)
    model.eval()
    return model
