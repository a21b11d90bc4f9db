"""Needle-in-haystack corpora: one key sentence carries the summary.

Tokens are single CJK characters.  The alphabet is split into a key part
and a noise part; key sentences draw only from the former, distractors from
the latter plus a bounded number of tokens copied out of the summary.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .corpus import RawPair, write_jsonl_pairs
from .errors import GenerationError

DELIMITER = "。"
_BASE = 0x4E00


@dataclass
class SynthSpec:
    vocab_size: int = 40
    n_pairs: int = 100
    n_sentences: int = 4
    sentence_len: int = 8
    key_position: str = "uniform"  # or "fixed"
    fixed_index: int = 0
    transform: str = "copy"        # or "prefix"
    prefix_k: int = 4
    noise_overlap: float = 0.0
    key_fraction: float = 0.5
    max_sentences: int = 20
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise GenerationError(f"unknown synth spec keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def n_key_symbols(self) -> int:
        return int(round(self.vocab_size * self.key_fraction))

    @property
    def summary_len(self) -> int:
        return self.sentence_len if self.transform == "copy" else self.prefix_k

    @property
    def overlap_per_distractor(self) -> int:
        return math.floor(self.noise_overlap * self.sentence_len)

    def validate(self) -> None:
        if self.n_pairs < 0 or self.sentence_len < 1:
            raise GenerationError("n_pairs must be >= 0 and sentence_len >= 1")
        if not 1 <= self.n_sentences <= self.max_sentences:
            raise GenerationError(
                f"n_sentences must lie in [1, {self.max_sentences}], got {self.n_sentences}")
        if self.key_position not in ("fixed", "uniform"):
            raise GenerationError(f"key_position must be 'fixed' or 'uniform'")
        if self.key_position == "fixed" and not 0 <= self.fixed_index < self.n_sentences:
            raise GenerationError(f"fixed_index {self.fixed_index} outside the document")
        if self.transform not in ("copy", "prefix"):
            raise GenerationError("transform must be 'copy' or 'prefix'")
        if self.transform == "prefix" and not 1 <= self.prefix_k <= self.sentence_len:
            raise GenerationError("prefix_k must lie in [1, sentence_len]")
        if not 0 <= self.noise_overlap < 1:
            raise GenerationError("noise_overlap must lie in [0, 1)")
        key = self.n_key_symbols
        if key < 1 or (self.n_sentences > 1 and self.vocab_size - key < 1):
            raise GenerationError(
                f"vocab_size {self.vocab_size} leaves no room for both key and noise symbols")
        if self.n_sentences > 1 and self.overlap_per_distractor >= self.summary_len:
            raise GenerationError(
                "noise overlap would let a distractor match the summary as well as the key")


@dataclass
class SynthCorpus:
    pairs: list[RawPair]
    keys: list[int]
    spec: SynthSpec


def _symbols(start: int, count: int) -> list[str]:
    return [chr(_BASE + start + k) for k in range(count)]


def generate(spec: SynthSpec) -> SynthCorpus:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_key = spec.n_key_symbols
    key_alpha = _symbols(0, n_key)
    noise_alpha = _symbols(n_key, spec.vocab_size - n_key)
    c = spec.overlap_per_distractor
    pairs, keys = [], []
    for _ in range(spec.n_pairs):
        if spec.key_position == "fixed":
            key = spec.fixed_index
        else:
            key = int(rng.integers(spec.n_sentences))
        key_tokens = [key_alpha[i] for i in rng.integers(n_key, size=spec.sentence_len)]
        summary = key_tokens if spec.transform == "copy" else key_tokens[:spec.prefix_k]
        sentences = []
        for j in range(spec.n_sentences):
            if j == key:
                sentences.append(key_tokens)
                continue
            toks = [noise_alpha[i] for i in rng.integers(len(noise_alpha), size=spec.sentence_len)]
            if c:
                borrowed = rng.choice(len(summary), size=c, replace=False)
                slots = rng.choice(spec.sentence_len, size=c, replace=False)
                for s, b in zip(slots, borrowed):
                    toks[s] = summary[b]
            sentences.append(toks)
        text = "".join("".join(s) + DELIMITER for s in sentences)
        pairs.append(RawPair(text, "".join(summary)))
        keys.append(key)
    return SynthCorpus(pairs, keys, spec)


def write_corpus(corpus: SynthCorpus, out_dir, name: str = "corpus") -> tuple[Path, Path]:
    """Write ``<name>.jsonl`` and the ground-truth ``<name>.keys`` (one index per line)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs_path = out / f"{name}.jsonl"
    keys_path = out / f"{name}.keys"
    write_jsonl_pairs(pairs_path, corpus.pairs)
    with open(keys_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{k}\n" for k in corpus.keys)
    return pairs_path, keys_path


def read_keys(path) -> list[int]:
    with open(path, encoding="utf-8") as fh:
        return [int(line) for line in fh if line.strip()]
