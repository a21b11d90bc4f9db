"""Abstractive summarization with a learned sentence weight distribution."""

from .corpus import CorpusConfig, RawPair, Vocab, build_vocab, encode_corpus, make_batches
from .model import ModelConfig, SWDModel
from .rouge import RougeScore, lcs_length, rouge_l, rouge_n
from .synth import SynthSpec, generate
from .trainer import TrainConfig, evaluate, joint_loss, train
from .weights import estimate_corpus_weights, normalize_weights, sentence_scores

__version__ = "0.1.0"
