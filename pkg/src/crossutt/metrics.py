"""Levenshtein alignment and word error rate."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence


@dataclass
class WerResult:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int
    # per reference position: True if aligned to an identical hypothesis token
    matched: list[bool] = field(default_factory=list)

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        if self.ref_len == 0:
            return 0.0 if self.insertions == 0 else float("inf")
        return self.errors / self.ref_len


def wer(hyp: Sequence, ref: Sequence) -> WerResult:
    """Minimum-edit alignment of ``hyp`` against ``ref``.

    Ties prefer match/substitution, then deletion, then insertion, so the
    per-position ``matched`` flags are deterministic.
    """
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ri != hyp[j - 1])
            row[j] = min(sub, prev[j] + 1, row[j - 1] + 1)

    s = dl = ins = 0
    matched = [False] * n
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] == hyp[j - 1]:
                matched[i - 1] = True
            else:
                s += 1
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dl += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WerResult(s, dl, ins, n, matched)
