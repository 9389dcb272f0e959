"""Clip-aware minibatch planning.

Each batch slot consumes whole clips in start-time order so the cached
context for an utterance is always its true predecessor. When a slot's clip
runs out, the longest clip not yet assigned takes its place, marked as a
context reset.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus


@dataclass(frozen=True)
class SlotStep:
    clip_id: str
    utt_index: int
    reset: bool


@dataclass
class SerializedBatchPlan:
    batch_size: int
    slots: list[list[SlotStep | None]]

    @property
    def num_steps(self) -> int:
        return len(self.slots[0]) if self.slots else 0

    def step(self, k: int) -> list[SlotStep | None]:
        return [s[k] for s in self.slots]

    def __iter__(self):
        for k in range(self.num_steps):
            yield self.step(k)


def serialize(corpus: Corpus, batch_size: int, seed: int = 0, shuffle: bool = True) -> SerializedBatchPlan:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    clips = corpus.clips()
    if not clips:
        raise ValueError("cannot serialize an empty corpus")
    order = list(clips)
    if shuffle:
        perm = np.random.default_rng(seed).permutation(len(order))
        order = [order[i] for i in perm]
    rank = {cid: i for i, cid in enumerate(order)}
    queue = deque(sorted(order, key=lambda c: (-len(clips[c]), rank[c])))

    slots: list[list[SlotStep | None]] = [[] for _ in range(batch_size)]
    current: list[tuple[str, deque] | None] = [None] * batch_size
    while True:
        row: list[SlotStep | None] = []
        for b in range(batch_size):
            reset = False
            if current[b] is None or not current[b][1]:
                current[b] = None
                if queue:
                    cid = queue.popleft()
                    current[b] = (cid, deque(clips[cid]))
                    reset = True
            if current[b] is None:
                row.append(None)
            else:
                cid, rest = current[b]
                row.append(SlotStep(cid, rest.popleft(), reset))
        if all(s is None for s in row):
            break
        for b in range(batch_size):
            slots[b].append(row[b])
    return SerializedBatchPlan(batch_size, slots)
