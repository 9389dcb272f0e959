"""Synthetic clips with a controllable cross-utterance dependency.

Every utterance carries one *cue* token. With probability ``p_dependent`` a
non-first utterance also carries a *dependent* token whose identity equals
the previous utterance's cue, while all dependent tokens share one acoustic
template. Inside a single utterance the dependent token is therefore
ambiguous; only the preceding utterance resolves it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Utterance

FRAME_RATE = 100.0


@dataclass
class SyntheticTaskSpec:
    n_words: int = 6
    n_confusable: int = 2
    feature_dim: int = 16
    frames_per_token: tuple[int, int] = (8, 8)
    words_per_utt: tuple[int, int] = (1, 3)
    utts_per_clip: tuple[int, int] = (3, 6)
    n_clips: int = 40
    noise: float = 0.3
    p_dependent: float = 0.5
    gap_seconds: float = 0.5

    def vocab(self) -> list[str]:
        return (["<blank>"] + [f"w{i}" for i in range(self.n_words)]
                + [f"cue{i}" for i in range(self.n_confusable)]
                + [f"dep{i}" for i in range(self.n_confusable)])

    def cue_id(self, i: int) -> int:
        return 1 + self.n_words + i

    def dep_id(self, i: int) -> int:
        return 1 + self.n_words + self.n_confusable + i

    def dependent_ids(self) -> set[int]:
        return {self.dep_id(i) for i in range(self.n_confusable)}


def token_templates(spec: SyntheticTaskSpec, seed: int) -> np.ndarray:
    """[V, F] acoustic templates; all dependent tokens share one row."""
    rng = np.random.default_rng([seed, 1])
    V = len(spec.vocab())
    tmpl = rng.normal(0.0, 1.0, (V, spec.feature_dim))
    tmpl[0] = 0.0
    shared = tmpl[spec.dep_id(0)].copy()
    for i in range(spec.n_confusable):
        tmpl[spec.dep_id(i)] = shared
    return tmpl


def generate_synthetic_corpus(spec: SyntheticTaskSpec, seed: int,
                              templates_seed: int | None = None) -> Corpus:
    """Deterministic for ``seed``. ``templates_seed`` (default ``seed``) fixes
    the acoustic templates so train/test corpora can share them."""
    tmpl = token_templates(spec, seed if templates_seed is None else templates_seed)
    rng = np.random.default_rng([seed, 2])
    utts: list[Utterance] = []
    for c in range(spec.n_clips):
        clip_id = f"clip{c:05d}"
        n_utts = int(rng.integers(spec.utts_per_clip[0], spec.utts_per_clip[1] + 1))
        t0 = 0.0
        prev_cue: int | None = None
        for _ in range(n_utts):
            n_words = int(rng.integers(spec.words_per_utt[0], spec.words_per_utt[1] + 1))
            tokens = [1 + int(w) for w in rng.integers(0, spec.n_words, n_words)]
            cue = int(rng.integers(0, spec.n_confusable))
            tokens.insert(int(rng.integers(0, len(tokens) + 1)), spec.cue_id(cue))
            dep_pos: tuple[int, ...] = ()
            if prev_cue is not None and rng.random() < spec.p_dependent:
                pos = int(rng.integers(0, len(tokens) + 1))
                tokens.insert(pos, spec.dep_id(prev_cue))
                dep_pos = (pos,)
            frames, spans = [], []
            start = 0
            for tok in tokens:
                n = int(rng.integers(spec.frames_per_token[0], spec.frames_per_token[1] + 1))
                seg = tmpl[tok][None, :] + spec.noise * rng.normal(0.0, 1.0, (n, spec.feature_dim))
                frames.append(seg)
                spans.append((start, start + n))
                start += n
            feats = np.concatenate(frames).astype(np.float32)
            utts.append(Utterance(clip_id, round(t0, 3), feats, tuple(tokens), dep_pos, tuple(spans)))
            t0 += feats.shape[0] / FRAME_RATE + spec.gap_seconds
            prev_cue = cue
    return Corpus(utts, spec.vocab())


def template_classifier(tmpl: np.ndarray, utt: Utterance, candidates: list[int] | None = None) -> list[int]:
    """Nearest-template label per aligned token span, using only this utterance.

    Ties (identical templates) resolve to the lowest id, which is as good as
    any other utterance-internal rule.
    """
    ids = np.arange(1, tmpl.shape[0]) if candidates is None else np.asarray(candidates)
    out = []
    for s, e in utt.token_frames:
        mean = utt.features[s:e].mean(axis=0)
        d = ((tmpl[ids] - mean) ** 2).sum(axis=1)
        out.append(int(ids[int(np.argmin(d))]))
    return out
