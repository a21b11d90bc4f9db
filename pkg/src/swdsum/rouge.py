"""ROUGE-N and ROUGE-L over token sequences.

Sequences are any ordered containers of hashable tokens (ids or strings).
Empty candidates or references score zero rather than raising, so sentence
scoring can tolerate degenerate sentences.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

__all__ = [
    "RougeScore",
    "ngram_counts",
    "rouge_n",
    "lcs_length",
    "rouge_l",
    "rouge",
    "f_measure",
    "VARIANTS",
]

VARIANTS = ("rouge-1", "rouge-2", "rouge-l")


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f: float

    def get(self, measure: str) -> float:
        return {"p": self.precision, "precision": self.precision,
                "r": self.recall, "recall": self.recall,
                "f": self.f}[measure]


def f_measure(precision: float, recall: float, beta: float = 1.0) -> float:
    if precision + recall <= 0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * precision * recall / (recall + b2 * precision)


def ngram_counts(seq: Sequence[Hashable], n: int) -> Counter:
    if n < 1:
        raise ValueError(f"n-gram order must be >= 1, got {n}")
    seq = tuple(seq)
    return Counter(seq[i:i + n] for i in range(len(seq) - n + 1))


def _score(overlap: int, cand_total: int, ref_total: int, beta: float) -> RougeScore:
    p = overlap / cand_total if cand_total else 0.0
    r = overlap / ref_total if ref_total else 0.0
    return RougeScore(p, r, f_measure(p, r, beta))


def rouge_n(candidate: Sequence[Hashable], reference: Sequence[Hashable], n: int,
            beta: float = 1.0) -> RougeScore:
    """Clipped n-gram overlap, so a repeated candidate n-gram counts at most
    as often as it occurs in the reference."""
    cand = ngram_counts(candidate, n)
    ref = ngram_counts(reference, n)
    overlap = sum((cand & ref).values())
    return _score(overlap, sum(cand.values()), sum(ref.values()), beta)


def lcs_length(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return 0
    # one row of the DP table is enough for the length
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            if x == y:
                cur.append(prev[j] + 1)
            else:
                cur.append(max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[Hashable], reference: Sequence[Hashable],
            beta: float = 1.0) -> RougeScore:
    lcs = lcs_length(candidate, reference)
    return _score(lcs, len(candidate), len(reference), beta)


def rouge(candidate, reference, variant: str = "rouge-1", beta: float = 1.0) -> RougeScore:
    """Dispatch on a variant name: ``rouge-1``, ``rouge-2`` or ``rouge-l``
    (the bare suffixes ``1``, ``2``, ``l`` are accepted too)."""
    v = variant.lower()
    if not v.startswith("rouge-"):
        v = "rouge-" + v
    if v == "rouge-l":
        return rouge_l(candidate, reference, beta)
    if v in ("rouge-1", "rouge-2"):
        return rouge_n(candidate, reference, int(v[-1]), beta)
    raise ValueError(f"unknown ROUGE variant {variant!r}; expected one of {VARIANTS}")
