"""Utterance corpora and their on-disk form.

Layout of a corpus directory::

    vocab.txt        one token per line, line number = id, id 0 is blank
    manifest.jsonl   one JSON record per utterance
    feats/*.ctxf     "CTXF", u32 version, u32 T, u32 F, T*F float32 (little-endian)
"""
from __future__ import annotations

import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"CTXF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class CorpusFormatError(ValueError):
    pass


class LengthMismatchError(CorpusFormatError):
    pass


@dataclass
class Utterance:
    clip_id: str
    start_time: float
    features: np.ndarray
    labels: tuple[int, ...]
    dependent_positions: tuple[int, ...] = ()
    token_frames: tuple[tuple[int, int], ...] = ()

    @property
    def num_frames(self) -> int:
        return int(self.features.shape[0])


@dataclass
class Corpus:
    utterances: list[Utterance]
    vocab: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def feature_dim(self) -> int:
        return int(self.utterances[0].features.shape[1]) if self.utterances else 0

    def clips(self) -> "OrderedDict[str, list[int]]":
        """clip id -> utterance indices sorted by start time (clips in first-seen order)."""
        out: OrderedDict[str, list[int]] = OrderedDict()
        for i, u in enumerate(self.utterances):
            out.setdefault(u.clip_id, []).append(i)
        for cid in out:
            out[cid].sort(key=lambda i: (self.utterances[i].start_time, i))
        return out

    def filter_short(self, min_frames: int) -> "Corpus":
        keep = []
        for u in self.utterances:
            if u.num_frames < min_frames:
                log.warning("dropping utterance of clip %s at %.2fs: %d frames < %d",
                            u.clip_id, u.start_time, u.num_frames, min_frames)
            else:
                keep.append(u)
        return Corpus(keep, list(self.vocab))


def write_feature_file(path, feats: np.ndarray) -> None:
    feats = np.ascontiguousarray(feats, dtype="<f4")
    T, F = feats.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, T, F))
        fh.write(feats.tobytes())


def read_feature_file(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorpusFormatError(f"{path}: truncated header")
    magic, version, T, F = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise CorpusFormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise CorpusFormatError(f"{path}: unsupported version {version}")
    body = raw[_HEADER.size:]
    if len(body) != 4 * T * F:
        raise LengthMismatchError(f"{path}: header says {T}x{F} floats ({4 * T * F} bytes), "
                                  f"file holds {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(T, F).astype(np.float32)


def write_vocab(path, vocab: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{tok}\n" for tok in vocab), encoding="utf-8")


def read_vocab(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def write_corpus(corpus: Corpus, directory) -> Path:
    d = Path(directory)
    (d / "feats").mkdir(parents=True, exist_ok=True)
    write_vocab(d / "vocab.txt", corpus.vocab)
    lines = []
    for i, u in enumerate(corpus.utterances):
        rel = f"feats/{i:06d}.ctxf"
        write_feature_file(d / rel, u.features)
        rec = {
            "clip_id": u.clip_id,
            "start_time": u.start_time,
            "feature_file": rel,
            "labels": list(u.labels),
            "num_frames": u.num_frames,
            "feature_dim": int(u.features.shape[1]),
        }
        if u.dependent_positions:
            rec["dependent_positions"] = list(u.dependent_positions)
        if u.token_frames:
            rec["token_frames"] = [list(s) for s in u.token_frames]
        lines.append(json.dumps(rec, ensure_ascii=False))
    (d / "manifest.jsonl").write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return d


def read_corpus(directory) -> Corpus:
    d = Path(directory)
    manifest = d / "manifest.jsonl"
    if not manifest.exists():
        raise CorpusFormatError(f"{d}: no manifest.jsonl")
    vocab = read_vocab(d / "vocab.txt") if (d / "vocab.txt").exists() else []
    utts = []
    for n, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{manifest}:{n}: {exc}") from exc
        feats = read_feature_file(d / rec["feature_file"])
        if feats.shape != (rec["num_frames"], rec["feature_dim"]):
            raise LengthMismatchError(f"{manifest}:{n}: manifest says {rec['num_frames']}x"
                                      f"{rec['feature_dim']}, feature file holds {feats.shape}")
        utts.append(Utterance(
            clip_id=rec["clip_id"], start_time=rec["start_time"], features=feats,
            labels=tuple(rec["labels"]),
            dependent_positions=tuple(rec.get("dependent_positions", ())),
            token_frames=tuple(tuple(s) for s in rec.get("token_frames", ())),
        ))
    return Corpus(utts, vocab)
