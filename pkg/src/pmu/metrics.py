"""Word error rate via minimal-edit alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tokenizers import normalize_text


@dataclass
class WerReport:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_words: int = 0
    wer: float = 0.0
    undefined: bool = False

    def __add__(self, other: "WerReport") -> "WerReport":
        s = self.substitutions + other.substitutions
        i = self.insertions + other.insertions
        d = self.deletions + other.deletions
        n = self.ref_words + other.ref_words
        if n == 0:
            return WerReport(s, i, d, 0, 0.0, undefined=True)
        return WerReport(s, i, d, n, (s + i + d) / n)

    def format(self) -> str:
        if self.undefined:
            return "WER undefined (empty reference)"
        return (f"WER {100.0 * self.wer:.2f}%  "
                f"S={self.substitutions} I={self.insertions} "
                f"D={self.deletions} N={self.ref_words}")


def wer(ref_text: str, hyp_text: str) -> WerReport:
    """Levenshtein alignment over whitespace tokens with unit costs.

    Traceback prefers the diagonal (match/substitution) over deletion over
    insertion, so tied alignments always yield the same count split.
    """
    ref = normalize_text(ref_text).split()
    hyp = normalize_text(hyp_text).split()
    if not ref:
        return WerReport(insertions=len(hyp), undefined=True)
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dele = dist[i - 1, j] + 1
            ins = dist[i, j - 1] + 1
            dist[i, j] = min(sub, dele, ins)
    s = d = ins_count = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins_count += 1
            j -= 1
    return WerReport(substitutions=s, insertions=ins_count, deletions=d,
                     ref_words=n, wer=(s + ins_count + d) / n)


def wer_corpus(pairs) -> WerReport:
    """Aggregate WER over (ref, hyp) text pairs: summed counts over summed
    reference length."""
    total = WerReport()
    for ref, hyp in pairs:
        total = total + wer(ref, hyp)
    if total.ref_words == 0:
        total.undefined = True
    return total
