"""Greedy-decoding evaluation in clip order with context carried forward."""
from __future__ import annotations

from ..context import ContextCache
from ..data.corpus import Corpus
from ..data.serialize import serialize
from ..encoder import SUBSAMPLE_MIN_FRAMES
from ..metrics import wer
from ..model import ContextualTransducer, make_batch
from ..numerics.tensor import no_grad
from .train import store_layers


def evaluate(model: ContextualTransducer, corpus: Corpus, batch_size: int = 8,
             clear_cache: bool = False, reference_history: bool = False) -> dict:
    """WER and token accuracy, overall and on dependency-marked tokens.

    The predictor cache is fed the previous utterance's greedy hypothesis
    unless ``reference_history``. ``clear_cache`` withholds all context.
    """
    corpus = corpus.filter_short(SUBSAMPLE_MIN_FRAMES)
    if len(corpus) == 0:
        raise ValueError("cannot evaluate on an empty corpus")
    cfg = model.cfg
    model.eval()
    cache = ContextCache(cfg.context.n_prev)
    poolers = model.pooler_map() if cfg.context_mode == "pooled" else None
    plan = serialize(corpus, batch_size, seed=0, shuffle=False)
    subs = dels = ins = n_ref = matched = 0
    dep_total = dep_correct = 0
    n_utts = 0
    for row in plan:
        active = [(b, s) for b, s in enumerate(row) if s is not None]
        for b, s in active:
            if s.reset or clear_cache:
                cache.reset(b)
        entries = [cache.read(b, s.clip_id) for b, s in active]
        batch = make_batch(corpus, [s.utt_index for _, s in active], model.dtype)
        hyps, states, layers, out_lens = model.decode(batch, entries)
        for i, (b, s) in enumerate(active):
            utt = corpus.utterances[s.utt_index]
            res = wer(hyps[i], list(utt.labels))
            subs += res.substitutions
            dels += res.deletions
            ins += res.insertions
            n_ref += res.ref_len
            matched += sum(res.matched)
            for p in utt.dependent_positions:
                dep_total += 1
                dep_correct += res.matched[p]
            n_utts += 1
            state = states[i]
            if reference_history:
                prev = next((e.predictor_state for e in reversed(entries[i])
                             if e.predictor_state is not None), None)
                state = model.reference_state(utt.labels, prev)
            cache.update(b, s.clip_id, store_layers(model, layers, i, out_lens[i]),
                         state if cfg.predictor.use_context else None, poolers)
    errors = subs + dels + ins
    return {
        "context_mode": cfg.context_mode,
        "utterances": n_utts,
        "ref_tokens": n_ref,
        "substitutions": subs, "deletions": dels, "insertions": ins,
        "wer": errors / n_ref if n_ref else 0.0,
        "token_accuracy": matched / n_ref if n_ref else 0.0,
        "dependent_tokens": dep_total,
        "dependent_accuracy": dep_correct / dep_total if dep_total else None,
    }


def evaluate_loss(model: ContextualTransducer, corpus: Corpus, batch_size: int = 8) -> list[float]:
    """Per-utterance loss per reference token, served in clip order with context."""
    corpus = corpus.filter_short(SUBSAMPLE_MIN_FRAMES)
    if len(corpus) == 0:
        raise ValueError("cannot evaluate on an empty corpus")
    cfg = model.cfg
    model.eval()
    cache = ContextCache(cfg.context.n_prev)
    poolers = model.pooler_map() if cfg.context_mode == "pooled" else None
    out = []
    with no_grad():
        for row in serialize(corpus, batch_size, seed=0, shuffle=False):
            active = [(b, s) for b, s in enumerate(row) if s is not None]
            for b, s in active:
                if s.reset:
                    cache.reset(b)
            entries = [cache.read(b, s.clip_id) for b, s in active]
            batch = make_batch(corpus, [s.utt_index for _, s in active], model.dtype)
            res = model(batch, entries)
            for i, (b, s) in enumerate(active):
                out.append(float(res.losses.data[i]) / max(int(batch.label_lens[i]), 1))
                state = res.pred_hidden[i, batch.label_lens[i]] if cfg.predictor.use_context else None
                cache.update(b, s.clip_id, store_layers(model, res.layer_outputs, i, res.out_lens[i]),
                             state, poolers)
    return out
