import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swdsum.corpus import build_vocab, encode_corpus, read_jsonl_pairs
from swdsum.errors import GenerationError
from swdsum.rouge import rouge_n
from swdsum.synth import DELIMITER, SynthSpec, generate, read_keys, write_corpus
from swdsum.weights import estimate_corpus_weights


def split(text):
    return [s for s in text.split(DELIMITER) if s]


def test_deterministic_by_seed():
    spec = SynthSpec(n_pairs=20, seed=4, noise_overlap=0.25)
    assert generate(spec).pairs == generate(spec).pairs
    assert generate(spec).pairs != generate(SynthSpec(n_pairs=20, seed=5, noise_overlap=0.25)).pairs


def test_single_sentence_documents():
    c = generate(SynthSpec(n_pairs=10, n_sentences=1))
    assert c.keys == [0] * 10
    exs = encode_corpus(c.pairs, build_vocab(c.pairs))
    assert all(w.tolist() == [1.0] for w in estimate_corpus_weights(exs))


def test_clean_corpus_recovers_every_key():
    c = generate(SynthSpec(n_pairs=200, n_sentences=5, seed=1))
    exs = encode_corpus(c.pairs, build_vocab(c.pairs))
    ws = estimate_corpus_weights(exs)
    assert [int(np.argmax(w)) for w in ws] == c.keys


def test_clean_corpus_recall_is_binary():
    c = generate(SynthSpec(n_pairs=50, n_sentences=4, seed=2))
    for pair, key in zip(c.pairs, c.keys):
        for j, sent in enumerate(split(pair.text)):
            r = rouge_n(list(sent), list(pair.summary), 1).recall
            assert r == (1.0 if j == key else 0.0)


def test_key_sentence_produces_summary():
    for transform in ("copy", "prefix"):
        c = generate(SynthSpec(n_pairs=30, sentence_len=6, transform=transform, prefix_k=3))
        for pair, key in zip(c.pairs, c.keys):
            key_sent = split(pair.text)[key]
            expect = key_sent if transform == "copy" else key_sent[:3]
            assert pair.summary == expect


def test_fixed_key_position():
    c = generate(SynthSpec(n_pairs=15, n_sentences=5, key_position="fixed", fixed_index=3))
    assert set(c.keys) == {3}


def test_uniform_key_position_covers_all_slots():
    c = generate(SynthSpec(n_pairs=300, n_sentences=6, seed=3))
    assert set(c.keys) == set(range(6))


def test_noise_overlap_is_bounded():
    spec = SynthSpec(n_pairs=100, n_sentences=6, sentence_len=10, noise_overlap=0.1, seed=6)
    c = generate(spec)
    for pair, key in zip(c.pairs, c.keys):
        summary = set(pair.summary)
        for j, sent in enumerate(split(pair.text)):
            if j != key:
                shared = sum(ch in summary for ch in sent)
                assert shared <= 0.1 * len(sent)


@given(st.integers(0, 10_000), st.floats(0.0, 0.49), st.integers(2, 6), st.integers(2, 12))
@settings(max_examples=30, deadline=None)
def test_key_is_rouge_argmax_below_half_overlap(seed, rate, n, length):
    spec = SynthSpec(n_pairs=1000 // 30, n_sentences=n, sentence_len=length, noise_overlap=rate,
                     vocab_size=40, seed=seed)
    c = generate(spec)
    exs = encode_corpus(c.pairs, build_vocab(c.pairs))
    assert [int(np.argmax(w)) for w in estimate_corpus_weights(exs)] == c.keys


def test_key_is_rouge_argmax_on_a_thousand_pairs():
    spec = SynthSpec(n_pairs=1000, n_sentences=6, sentence_len=10, noise_overlap=0.4, seed=9)
    c = generate(spec)
    exs = encode_corpus(c.pairs, build_vocab(c.pairs))
    assert [int(np.argmax(w)) for w in estimate_corpus_weights(exs)] == c.keys


@pytest.mark.parametrize("kw", [
    dict(n_sentences=0),
    dict(n_sentences=21),
    dict(key_position="random"),
    dict(key_position="fixed", fixed_index=4),
    dict(transform="reverse"),
    dict(transform="prefix", prefix_k=9),
    dict(noise_overlap=1.0),
    dict(noise_overlap=-0.1),
    dict(vocab_size=1),
    dict(transform="prefix", prefix_k=2, sentence_len=8, noise_overlap=0.3),
])
def test_infeasible_specs(kw):
    with pytest.raises(GenerationError):
        generate(SynthSpec(**kw))


def test_spec_from_dict():
    assert SynthSpec.from_dict({"n_pairs": 3}).n_pairs == 3
    with pytest.raises(GenerationError):
        SynthSpec.from_dict({"pairs": 3})


def test_write_corpus(tmp_path):
    c = generate(SynthSpec(n_pairs=7, seed=8))
    pairs_path, keys_path = write_corpus(c, tmp_path, "needle")
    assert read_jsonl_pairs(pairs_path) == c.pairs
    assert read_keys(keys_path) == c.keys
    assert keys_path.read_text().splitlines()[0] == str(c.keys[0])
