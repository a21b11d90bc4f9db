"""Corpus ingestion: sentence splitting, vocabulary, encoding and batching."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import FormatError, IngestionError, VocabularyError

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")
DEFAULT_DELIMITERS = ("。", "！", "？", "；", ".", "!", "?", ";", "\n")

_WS = re.compile(r"\s+")


def normalize_whitespace(text: str) -> str:
    return _WS.sub(" ", text).strip()


@dataclass(frozen=True)
class RawPair:
    text: str
    summary: str

    def __post_init__(self):
        if not self.text or not self.summary:
            raise IngestionError("a pair needs nonempty text and summary")


@dataclass
class CorpusConfig:
    max_sentences: int = 20
    max_sentence_len: int = 150
    delimiters: tuple[str, ...] = DEFAULT_DELIMITERS
    tokenization: str = "char"  # or "word"
    min_count: int = 1

    def __post_init__(self):
        if self.tokenization not in ("char", "word"):
            raise ValueError(f"tokenization must be 'char' or 'word', got {self.tokenization!r}")
        if self.max_sentences < 1 or self.max_sentence_len < 1:
            raise ValueError("sentence limits must be >= 1")
        self.delimiters = tuple(self.delimiters)


# ---------------------------------------------------------------------------
# vocabulary


class Vocab:
    """Token <-> id map with the four reserved ids first."""

    def __init__(self, tokens: Iterable[str], tokenization: str = "char"):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        self.tokenization = tokenization
        for tok in tokens:
            if tok in self.stoi:
                raise VocabularyError(f"duplicate vocabulary token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def units(self, text: str) -> list[str]:
        text = normalize_whitespace(text)
        if self.tokenization == "word":
            return text.split(" ") if text else []
        return list(text)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> str:
        toks = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.itos):
                raise VocabularyError(f"token id {i} outside [0, {len(self.itos)})")
            if i in (PAD, BOS, EOS):
                continue
            toks.append(self.itos[i])
        return (" " if self.tokenization == "word" else "").join(toks)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok in self.itos:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path, tokenization: str = "char") -> "Vocab":
        with open(path, encoding="utf-8", newline="\n") as fh:
            lines = fh.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:4]) != RESERVED:
            raise FormatError(f"{path}: vocabulary must start with {', '.join(RESERVED)}")
        try:
            return cls(lines[4:], tokenization)
        except VocabularyError as exc:
            raise FormatError(f"{path}: {exc}") from None


def build_vocab(pairs: Iterable[RawPair], min_count: int = 1,
                tokenization: str = "char") -> Vocab:
    """Tokens with frequency >= min_count, most frequent first, ties by codepoint."""
    probe = Vocab((), tokenization)
    counts: Counter = Counter()
    seen = False
    for pair in pairs:
        seen = True
        counts.update(probe.units(pair.text))
        counts.update(probe.units(pair.summary))
    if not seen:
        raise IngestionError("cannot build a vocabulary from an empty corpus")
    kept = [t for t, c in counts.items() if c >= min_count and t not in RESERVED]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(kept, tokenization)


# ---------------------------------------------------------------------------
# documents


def split_sentences(text: str, delimiters: Sequence[str] = DEFAULT_DELIMITERS,
                    max_sentences: int | None = 20) -> list[str]:
    """Cut after every delimiter, keeping it on the preceding sentence.

    Each piece is whitespace-normalized; pieces left empty, or holding nothing
    but a delimiter, are dropped and only the first ``max_sentences`` survive.
    """
    pattern = "|".join(re.escape(d) for d in sorted(delimiters, key=len, reverse=True))
    pieces = re.findall(f"(?s).*?(?:{pattern})|.+", text) if pattern else [text]
    sentences = [s for s in (normalize_whitespace(p) for p in pieces)
                 if s and (not pattern or re.sub(pattern, "", s).strip())]
    if not sentences:
        raise IngestionError("text is empty after normalization")
    if max_sentences is not None:
        sentences = sentences[:max_sentences]
    return sentences


def tokenize(sentence: str, vocab: Vocab, max_len: int | None = 150) -> list[int]:
    ids = vocab.ids(vocab.units(sentence))
    return ids[:max_len] if max_len is not None else ids


@dataclass
class Document:
    sentences: list[list[int]]
    sen2word: list[list[int]] = field(init=False)
    word2sen: list[int] = field(init=False)

    def __post_init__(self):
        self.sen2word, self.word2sen = [], []
        pos = 0
        for j, sent in enumerate(self.sentences):
            self.sen2word.append(list(range(pos, pos + len(sent))))
            self.word2sen.extend([j] * len(sent))
            pos += len(sent)

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)

    @property
    def tokens(self) -> list[int]:
        return [t for s in self.sentences for t in s]

    def __len__(self) -> int:
        return len(self.word2sen)


def encode_document(text: str, vocab: Vocab, config: CorpusConfig | None = None) -> Document:
    cfg = config or CorpusConfig()
    raw = split_sentences(text, cfg.delimiters, max_sentences=None)
    sentences = [tokenize(s, vocab, cfg.max_sentence_len) for s in raw]
    sentences = [s for s in sentences if s][: cfg.max_sentences]
    if not sentences:
        raise IngestionError("document has no tokens after cleaning")
    return Document(sentences)


def encode_summary(text: str, vocab: Vocab) -> list[int]:
    ids = vocab.ids(vocab.units(text))
    if not ids:
        raise IngestionError("summary is empty after normalization")
    return ids


@dataclass
class Example:
    """One encoded training pair, optionally carrying its estimated weights."""

    document: Document
    summary: list[int]
    weights: np.ndarray | None = None
    text: str = ""
    summary_text: str = ""


def encode_corpus(pairs: Iterable[RawPair], vocab: Vocab,
                  config: CorpusConfig | None = None) -> list[Example]:
    return [
        Example(encode_document(p.text, vocab, config), encode_summary(p.summary, vocab),
                text=p.text, summary_text=p.summary)
        for p in pairs
    ]


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    src: np.ndarray        # [B, L] token ids, PAD-filled
    src_mask: np.ndarray   # [B, L] bool
    word2sen: np.ndarray   # [B, L] sentence index, 0 on padding
    sent_mask: np.ndarray  # [B, S] bool
    tgt: np.ndarray        # [B, m] BOS y EOS PAD...
    tgt_mask: np.ndarray   # [B, m] bool
    weights: np.ndarray    # [B, S] estimated weights, 0 on padding
    examples: list[Example]

    @property
    def size(self) -> int:
        return self.src.shape[0]


def collate(items: Sequence[Example]) -> Batch:
    B = len(items)
    L = max(len(ex.document) for ex in items)
    S = max(ex.document.n_sentences for ex in items)
    M = max(len(ex.summary) for ex in items) + 2
    src = np.full((B, L), PAD, dtype=np.int64)
    w2s = np.zeros((B, L), dtype=np.int64)
    sent_mask = np.zeros((B, S), dtype=bool)
    tgt = np.full((B, M), PAD, dtype=np.int64)
    weights = np.zeros((B, S))
    for b, ex in enumerate(items):
        toks = ex.document.tokens
        src[b, :len(toks)] = toks
        w2s[b, :len(toks)] = ex.document.word2sen
        sent_mask[b, :ex.document.n_sentences] = True
        framed = [BOS, *ex.summary, EOS]
        tgt[b, :len(framed)] = framed
        if ex.weights is not None:
            weights[b, :len(ex.weights)] = ex.weights
    return Batch(src, src != PAD, w2s, sent_mask, tgt, tgt != PAD, weights, list(items))


def make_batches(items: Sequence[Example], batch_size: int, seed: int = 0,
                 shuffle: bool = True) -> list[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng(seed).permutation(len(items)) if shuffle else np.arange(len(items))
    return [
        collate([items[i] for i in order[k:k + batch_size]])
        for k in range(0, len(items), batch_size)
    ]


# ---------------------------------------------------------------------------
# files


def read_jsonl_pairs(path) -> list[RawPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                text, summary = obj["text"], obj["summary"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: expected an object with "
                                  f"string fields 'text' and 'summary' ({exc})") from None
            if not isinstance(text, str) or not isinstance(summary, str):
                raise FormatError(f"{path}:{lineno}: 'text' and 'summary' must be strings")
            try:
                pairs.append(RawPair(text, summary))
            except IngestionError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return pairs


def read_tsv_pairs(path) -> list[RawPair]:
    """Lines of ``summary<TAB>text``."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise FormatError(f"{path}:{lineno}: expected summary<TAB>text")
            summary, text = line.split("\t", 1)
            try:
                pairs.append(RawPair(text, summary))
            except IngestionError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return pairs


def read_pairs(path, fmt: str = "jsonl") -> list[RawPair]:
    return read_tsv_pairs(path) if fmt == "tsv" else read_jsonl_pairs(path)


def write_jsonl_pairs(path, pairs: Iterable[RawPair]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(json.dumps({"text": p.text, "summary": p.summary}, ensure_ascii=False) + "\n")


def iter_lines(path) -> Iterator[str]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            yield line.rstrip("\n")


def vocab_path_for(path) -> Path:
    return Path(path).with_suffix(".vocab")
