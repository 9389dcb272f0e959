"""Pooling-weight heat maps over previous utterances, and a cue-localization probe."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..context import ContextCache, write_heatmap_csv
from ..data.corpus import Corpus, Utterance
from ..encoder import SUBSAMPLE_MIN_FRAMES
from ..model import ContextualTransducer, make_batch
from .train import store_layers

SUBSAMPLING = 4


@dataclass
class Heatmap:
    clip_id: str
    utt: int  # position of the current utterance in its clip
    prev: int  # 1 = immediately preceding utterance
    layer: int
    weights: np.ndarray  # [L, T_prev]
    tokens: list[str]  # per column, "" where no alignment covers the frame


def column_tokens(utt: Utterance, n_cols: int, vocab: list[str]) -> list[str]:
    """Token covering the centre raw frame (4j) of each subsampled column."""
    out = []
    for j in range(n_cols):
        raw = min(SUBSAMPLING * j, utt.num_frames - 1)
        tok = ""
        for (s, e), lab in zip(utt.token_frames, utt.labels):
            if s <= raw < e:
                tok = vocab[lab] if vocab else str(lab)
                break
        out.append(tok)
    return out


def clip_heatmaps(model: ContextualTransducer, corpus: Corpus, clip_id: str) -> list[Heatmap]:
    """Run a clip in order (eval mode) and collect every pooling weight matrix."""
    if model.cfg.context_mode != "pooled":
        raise ValueError("heat maps need context_mode=pooled")
    clips = corpus.clips()
    if clip_id not in clips:
        raise KeyError(f"no clip {clip_id!r} in corpus")
    model.eval()
    poolers = model.pooler_map()
    cache = ContextCache(model.cfg.context.n_prev)
    history: list[int] = []  # utterance indices matching the cache entries
    maps = []
    idx = [i for i in clips[clip_id] if corpus.utterances[i].num_frames >= SUBSAMPLE_MIN_FRAMES]
    for pos, ui in enumerate(idx):
        entries = cache.read(0, clip_id)
        prev_utts = history[-len(entries):] if entries else []
        for k, (e, pu) in enumerate(zip(reversed(entries), reversed(prev_utts)), start=1):
            for l, w in sorted(e.weights.items()):
                maps.append(Heatmap(clip_id, pos, k, l, w,
                                    column_tokens(corpus.utterances[pu], w.shape[1], corpus.vocab)))
        batch = make_batch(corpus, [ui], model.dtype)
        _, states, layers, out_lens = model.decode(batch, [entries])
        state = states[0] if model.cfg.predictor.use_context else None
        cache.update(0, clip_id, store_layers(model, layers, 0, out_lens[0]), state, poolers)
        history.append(ui)
    return maps


def export_heatmap(model: ContextualTransducer, corpus: Corpus, clip_id: str, out_dir) -> list[Path]:
    """One CSV per layer per previous utterance: ``<clip>/utt<i>_prev<k>_layer<l>.csv``."""
    out = Path(out_dir) / clip_id
    paths = []
    for h in clip_heatmaps(model, corpus, clip_id):
        p = out / f"utt{h.utt:03d}_prev{h.prev}_layer{h.layer}.csv"
        write_heatmap_csv(p, h.weights, h.tokens)
        paths.append(p)
    return paths


def cue_block_wins(h: Heatmap, cue_tokens: set[str]) -> bool | None:
    """Does the column block of the cue token get the most summed weight?

    Blocks are runs of columns sharing a token annotation. None when the
    previous utterance has no annotated cue.
    """
    mass = h.weights.sum(axis=0)
    blocks: list[tuple[str, float]] = []
    for tok, m in zip(h.tokens, mass):
        if blocks and blocks[-1][0] == tok:
            blocks[-1] = (tok, blocks[-1][1] + m)
        else:
            blocks.append((tok, float(m)))
    blocks = [b for b in blocks if b[0]]
    if not any(t in cue_tokens for t, _ in blocks):
        return None
    best = max(blocks, key=lambda b: b[1])
    return best[0] in cue_tokens and sum(m == best[1] for _, m in blocks) == 1


def cue_localization(model: ContextualTransducer, corpus: Corpus, cue_tokens: set[str]) -> dict:
    """Per clip: the cue block wins in a strict majority of its heat maps."""
    per_clip = {}
    for cid in corpus.clips():
        votes = [v for v in (cue_block_wins(h, cue_tokens) for h in clip_heatmaps(model, corpus, cid))
                 if v is not None]
        if votes:
            per_clip[cid] = sum(votes) * 2 > len(votes)
    n = len(per_clip)
    return {"clips": n, "localized": sum(per_clip.values()),
            "fraction": sum(per_clip.values()) / n if n else 0.0, "per_clip": per_clip}


def uniformity(model: ContextualTransducer, corpus: Corpus, clip_id: str) -> float:
    """Largest per-row max/min column weight over a clip's heat maps."""
    worst = 1.0
    for h in clip_heatmaps(model, corpus, clip_id):
        w = h.weights
        worst = max(worst, float((w.max(axis=1) / w.min(axis=1)).max()))
    return worst
