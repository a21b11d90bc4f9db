"""Joint objective, minibatch SGD, checkpoints and ROUGE evaluation."""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .corpus import Example, Vocab, collate, make_batches
from .errors import CompatibilityError, DivergenceError, FormatError
from .model import ModelConfig, SWDModel, param_shapes
from .rouge import rouge_l, rouge_n
from .tensor import Tensor

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
WEIGHT_LOSS_FORMS = ("cross_entropy", "literal")


@dataclass
class TrainConfig:
    batch_size: int = 32
    lam: float = 0.01
    learning_rate: float = 0.1
    epochs: int = 10
    clip_norm: float = 5.0
    seed: int = 0
    weight_loss_form: str = "cross_entropy"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be > 0")
        if self.weight_loss_form not in WEIGHT_LOSS_FORMS:
            raise ValueError(f"weight_loss_form must be one of {WEIGHT_LOSS_FORMS}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in {f.name for f in fields(cls)}})


# ---------------------------------------------------------------------------
# objective


@dataclass
class LossTerms:
    loss: Tensor
    nll: float        # (1/N) sum_i NLL_i
    weight_ce: float  # (1/N) sum_i CE_i, before multiplying by lambda
    tokens: int       # real target tokens in the batch
    token_nll: float  # NLL per target token


def weight_cross_entropy(target: np.ndarray, weights: Tensor, log_weights: Tensor,
                         sent_mask: np.ndarray, form: str = "cross_entropy") -> Tensor:
    """Summed weight term over the batch.

    ``cross_entropy``: ``-sum w * log w'`` with the estimated ``w`` as target.
    ``literal``: ``-sum w' * log w`` with ``w`` held fixed.
    """
    if form == "cross_entropy":
        return T.neg(T.sum(T.mul(log_weights, Tensor(np.where(sent_mask, target, 0.0)))))
    if form == "literal":
        safe = np.where(sent_mask, target, 1.0)
        return T.neg(T.sum(T.mul(weights, Tensor(np.where(sent_mask, np.log(safe), 0.0)))))
    raise ValueError(f"unknown weight loss form {form!r}")


def joint_loss(model: SWDModel, batch, lam: float, form: str = "cross_entropy") -> LossTerms:
    """``(1/N) sum_i [NLL_i + lam * CE_i]`` with teacher forcing.

    Raises DivergenceError when the loss is not finite.
    """
    N = batch.size
    enc = model.encoder_output(batch)
    logp = model.target_log_probs(batch, enc)
    tmask = batch.tgt_mask[:, 1:].astype(np.float64)
    nll_sum = T.neg(T.sum(T.mul(logp, Tensor(tmask))))
    loss = T.scale(nll_sum, 1.0 / N)
    ce = 0.0
    if model.config.swd:
        ce_sum = weight_cross_entropy(batch.weights, enc.weights, enc.log_weights,
                                      batch.sent_mask, form)
        loss = T.add(loss, T.scale(ce_sum, lam / N))
        ce = ce_sum.item() / N
    tokens = int(tmask.sum())
    terms = LossTerms(loss, nll_sum.item() / N, ce, tokens, nll_sum.item() / tokens)
    if not math.isfinite(loss.item()):
        raise DivergenceError(f"non-finite loss (nll={terms.nll}, weight_ce={terms.weight_ce})")
    return terms


# ---------------------------------------------------------------------------
# optimizer


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for _, g in sorted(grads.items())))


def sgd_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], learning_rate: float,
             clip_norm: float | None = 5.0) -> float:
    """Clip to ``clip_norm`` by global norm, then ``theta -= lr * g``.

    Returns the norm measured before clipping.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {name}")
    norm = global_norm(grads)
    factor = 1.0
    if clip_norm is not None and clip_norm > 0 and norm > clip_norm:
        factor = clip_norm / norm
    for name, g in grads.items():
        p = params[name]
        step = g * factor if factor != 1.0 else g
        p.data = p.data - learning_rate * step
    return norm


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model_config: ModelConfig
    vocab_path: str
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: SWDModel, vocab_path: str = "", **meta) -> "Checkpoint":
        return cls(model.config, str(vocab_path),
                   {k: p.data.copy() for k, p in model.params.items()}, dict(meta))

    def to_model(self) -> SWDModel:
        params = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        return SWDModel(self.model_config, params)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "model_config": ckpt.model_config.to_dict(),
        "vocab_path": ckpt.vocab_path,
        "params": {name: {"shape": list(a.shape), "data": [float(x) for x in a.reshape(-1)]}
                   for name, a in ckpt.params.items()},
        "meta": ckpt.meta,
    }
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not a valid checkpoint ({exc})") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: checkpoint must be a JSON object")
    missing = {"format_version", "model_config", "vocab_path", "params", "meta"} - set(doc)
    if missing:
        raise FormatError(f"{path}: missing fields {sorted(missing)}")
    if doc["format_version"] != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {doc['format_version']!r}")
    try:
        cfg = ModelConfig.from_dict(doc["model_config"])
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad model_config ({exc})") from None
    expected = param_shapes(cfg)
    params = {}
    raw = doc["params"]
    if set(raw) != set(expected):
        raise FormatError(f"{path}: parameter names {sorted(raw)} do not match "
                          f"the model config {sorted(expected)}")
    for name, shape in expected.items():
        entry = raw[name]
        try:
            declared = tuple(int(d) for d in entry["shape"])
            data = np.array(entry["data"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: array {name!r} is malformed ({exc})") from None
        if declared != shape:
            raise FormatError(f"{path}: array {name!r} declares shape {list(declared)}, "
                              f"model config implies {list(shape)}")
        if data.ndim != 1 or data.size != math.prod(shape):
            raise FormatError(f"{path}: array {name!r} has {data.size} values for shape "
                              f"{list(shape)}")
        params[name] = data.reshape(shape)
    return Checkpoint(cfg, doc["vocab_path"], params, doc["meta"])


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: SWDModel
    log: list[dict]
    checkpoint: Checkpoint
    epoch_means: list[dict] = field(default_factory=list)


def train(examples: Sequence[Example], model: SWDModel, config: TrainConfig,
          out_dir=None, vocab_path: str = "", valid: Sequence[Example] | None = None,
          on_epoch: Callable[[int, SWDModel], None] | None = None) -> TrainResult:
    """Shuffled minibatch SGD over ``config.epochs`` epochs.

    With ``out_dir`` set, writes ``train_log.jsonl`` and ``last.json`` after
    every epoch (plus ``best.json`` when ``valid`` is given).  On divergence
    the last completed checkpoint stays on disk and DivergenceError propagates.
    """
    if model.config.swd and any(ex.weights is None for ex in examples):
        raise ValueError("every training example needs estimated weights")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "w", encoding="utf-8", newline="\n")
    rows: list[dict] = []
    epoch_means: list[dict] = []
    step = 0
    best = math.inf
    try:
        for epoch in range(1, config.epochs + 1):
            batches = make_batches(examples, config.batch_size, seed=config.seed * 100003 + epoch)
            nll_acc = ce_acc = 0.0
            for batch in batches:
                terms = joint_loss(model, batch, config.lam, config.weight_loss_form)
                T.backward(terms.loss)
                norm = sgd_step(model.params, collect_grads(model.params),
                                config.learning_rate, config.clip_norm)
                step += 1
                row = {"step": step, "epoch": epoch, "nll": terms.nll,
                       "weight_ce": terms.weight_ce, "grad_norm": norm}
                rows.append(row)
                nll_acc += terms.nll * batch.size
                ce_acc += terms.weight_ce * batch.size
                if out is not None:
                    log_fh.write(json.dumps(row) + "\n")
            # per-document averages over the epoch
            epoch_means.append({"epoch": epoch, "nll": nll_acc / len(examples),
                                "weight_ce": ce_acc / len(examples)})
            log.info("epoch %d  nll %.4f  weight_ce %.4f", epoch,
                     epoch_means[-1]["nll"], epoch_means[-1]["weight_ce"])
            if out is not None:
                log_fh.flush()
                meta = {"step": step, "epoch": epoch, "seed": config.seed,
                        "train_config": asdict(config), "loss_history": epoch_means}
                save_checkpoint(Checkpoint.from_model(model, vocab_path, **meta), out / "last.json")
                if valid:
                    score = mean_token_nll(model, valid, config.batch_size)
                    if score < best:
                        best = score
                        meta["valid_token_nll"] = score
                        save_checkpoint(Checkpoint.from_model(model, vocab_path, **meta),
                                        out / "best.json")
            if on_epoch is not None:
                on_epoch(epoch, model)
    finally:
        if out is not None:
            log_fh.close()
    ckpt = Checkpoint.from_model(model, vocab_path, step=step, epoch=config.epochs,
                                 seed=config.seed, train_config=asdict(config),
                                 loss_history=epoch_means)
    return TrainResult(model, rows, ckpt, epoch_means)


# ---------------------------------------------------------------------------
# diagnostics and evaluation


def _chunks(items: Sequence, size: int):
    for k in range(0, len(items), size):
        yield items[k:k + size]


def mean_token_nll(model: SWDModel, examples: Sequence[Example], batch_size: int = 32) -> float:
    total = tokens = 0.0
    with T.no_grad():
        for chunk in _chunks(examples, batch_size):
            batch = collate(chunk)
            logp = model.target_log_probs(batch, model.encoder_output(batch))
            tmask = batch.tgt_mask[:, 1:]
            total -= float(np.sum(logp.data[tmask]))
            tokens += float(tmask.sum())
    return total / tokens


def predicted_weights(model: SWDModel, examples: Sequence[Example],
                      batch_size: int = 32) -> list[np.ndarray]:
    out = []
    for chunk in _chunks(examples, batch_size):
        out.extend(model.predict_weights(collate(chunk)))
    return out


def mean_weight_kl(model: SWDModel, examples: Sequence[Example], batch_size: int = 32) -> float:
    """Mean KL(w || w') between estimated and predicted weights."""
    kls = []
    for ex, wp in zip(examples, predicted_weights(model, examples, batch_size)):
        w = ex.weights
        kls.append(float(np.sum(w * (np.log(w) - np.log(wp)))))
    return float(np.mean(kls))


def decode_corpus(model: SWDModel, examples: Sequence[Example], max_len: int,
                  batch_size: int = 32) -> list[list[int]]:
    out = []
    for chunk in _chunks(examples, batch_size):
        out.extend(model.greedy_decode(collate(chunk), max_len))
    return out


@dataclass
class EvalReport:
    tag: str
    n: int
    scores: dict[str, dict[str, float]]  # metric -> {"p","r","f"} corpus means


def score_outputs(outputs: Sequence[Sequence], references: Sequence[Sequence],
                  tag: str = "model", beta: float = 1.0) -> EvalReport:
    acc = {m: np.zeros(3) for m in ("R-1", "R-2", "R-L")}
    for cand, ref in zip(outputs, references):
        for metric, s in (("R-1", rouge_n(cand, ref, 1, beta)),
                          ("R-2", rouge_n(cand, ref, 2, beta)),
                          ("R-L", rouge_l(cand, ref, beta))):
            acc[metric] += (s.precision, s.recall, s.f)
    n = len(references)
    scores = {m: dict(zip(("p", "r", "f"), (v / n if n else v).tolist())) for m, v in acc.items()}
    return EvalReport(tag, n, scores)


def evaluate(model: SWDModel, examples: Sequence[Example], tag: str = "model",
             max_len: int | None = None, batch_size: int = 32) -> EvalReport:
    """Greedy-decode every document and score it against its reference."""
    refs = [ex.summary for ex in examples]
    if max_len is None:
        max_len = max(len(r) for r in refs) + 5
    return score_outputs(decode_corpus(model, examples, max_len, batch_size), refs, tag)


def format_report(reports: Sequence[EvalReport], detail: bool = False) -> str:
    """Tab-separated table, one row per model, scores as percentages."""
    header = ["model", "R-1", "R-2", "R-L"]
    if detail:
        header += [f"{m}-{k}" for m in ("R-1", "R-2", "R-L") for k in ("P", "R")]
    lines = ["\t".join(header)]
    for rep in reports:
        cells = [rep.tag] + [f"{100 * rep.scores[m]['f']:.1f}" for m in ("R-1", "R-2", "R-L")]
        if detail:
            cells += [f"{100 * rep.scores[m][k]:.1f}"
                      for m in ("R-1", "R-2", "R-L") for k in ("p", "r")]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def check_vocab(checkpoint_vocab: Vocab, corpus_vocab: Vocab, ckpt_path: str,
                corpus_path: str) -> None:
    if checkpoint_vocab != corpus_vocab:
        raise CompatibilityError(
            f"vocabulary mismatch: checkpoint uses {ckpt_path}, corpus uses {corpus_path}"
        )
