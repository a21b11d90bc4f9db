"""Gold sentence weights: softmax over per-sentence ROUGE against the summary."""

from __future__ import annotations

import json
from typing import Iterable, Sequence

import numpy as np

from .corpus import Document, Example
from .errors import DegenerateInputError, FormatError
from .rouge import rouge

MEASURES = ("precision", "recall", "f")


def sentence_scores(doc: Document, summary: Sequence[int], variant: str = "rouge-1",
                    measure: str = "f", beta: float = 1.0) -> np.ndarray:
    """ROUGE of every sentence (as candidate) against the summary (as reference)."""
    if doc.n_sentences < 1:
        raise DegenerateInputError("document has no sentences")
    if measure not in MEASURES:
        raise ValueError(f"measure must be one of {MEASURES}, got {measure!r}")
    return np.array([rouge(s, summary, variant, beta).get(measure) for s in doc.sentences])


def normalize_weights(scores: Sequence[float]) -> np.ndarray:
    e = np.asarray(scores, dtype=np.float64)
    if e.ndim != 1 or e.size == 0:
        raise DegenerateInputError("need a nonempty 1-D score vector")
    z = np.exp(e - e.max())
    return z / z.sum()


def estimate_weights(doc: Document, summary: Sequence[int], variant: str = "rouge-1",
                     measure: str = "f") -> np.ndarray:
    return normalize_weights(sentence_scores(doc, summary, variant, measure))


def estimate_corpus_weights(examples: Iterable[Example], variant: str = "rouge-1",
                            measure: str = "f") -> list[np.ndarray]:
    """Compute and attach weights to every example; returns them in order."""
    out = []
    for ex in examples:
        ex.weights = estimate_weights(ex.document, ex.summary, variant, measure)
        out.append(ex.weights)
    return out


def write_weights(path, weights: Iterable[Sequence[float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w in weights:
            fh.write(json.dumps([float(x) for x in w]) + "\n")


def read_weights(path) -> list[np.ndarray]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if not isinstance(row, list) or not row or not all(
                isinstance(x, (int, float)) for x in row
            ):
                raise FormatError(f"{path}:{lineno}: expected a nonempty array of numbers")
            out.append(np.array(row, dtype=np.float64))
    return out


def attach_weights(examples: Sequence[Example], weights: Sequence[np.ndarray]) -> None:
    if len(examples) != len(weights):
        raise FormatError(f"weight file has {len(weights)} rows for {len(examples)} documents")
    for k, (ex, w) in enumerate(zip(examples, weights)):
        if len(w) != ex.document.n_sentences:
            raise FormatError(
                f"row {k + 1}: {len(w)} weights for a {ex.document.n_sentences}-sentence document"
            )
        ex.weights = np.asarray(w, dtype=np.float64)
