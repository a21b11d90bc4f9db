"""Command-line entry point: ``swdsum <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 data/format error, 3 divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .corpus import (
    CorpusConfig,
    Vocab,
    build_vocab,
    encode_corpus,
    encode_document,
    read_pairs,
    vocab_path_for,
)
from .errors import (
    CompatibilityError,
    DivergenceError,
    FormatError,
    GenerationError,
    IngestionError,
    SwdError,
    VocabularyError,
)
from .model import ModelConfig, SWDModel
from .rouge import rouge
from .synth import SynthSpec, generate, write_corpus
from .trainer import (
    Checkpoint,
    TrainConfig,
    evaluate,
    format_report,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .weights import attach_weights, estimate_corpus_weights, read_weights, write_weights

log = logging.getLogger("swdsum")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# key = value configuration


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


RUN_SCHEMA = {
    # model
    "embed_dim": int, "hidden_dim": int, "position_dim": int, "mlp_hidden": int,
    "max_sentences": int, "attention": _bool, "swd": _bool, "detach_weights": _bool,
    "init_scale": float, "seed": int,
    # training
    "batch_size": int, "lambda": float, "learning_rate": float, "epochs": int,
    "clip_norm": float, "weight_loss_form": str,
    # corpus
    "max_sentence_len": int, "tokenization": str, "min_count": int, "corpus_format": str,
    # weight estimation and evaluation
    "variant": str, "measure": str, "max_len": int, "beta": float,
}

SYNTH_SCHEMA = {
    "vocab_size": int, "n_pairs": int, "n_sentences": int, "sentence_len": int,
    "key_position": str, "fixed_index": int, "transform": str, "prefix_k": int,
    "noise_overlap": float, "key_fraction": float, "max_sentences": int, "seed": int,
}


def parse_kv_lines(lines, schema: dict, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = _coerce(key, value, schema, f"{source}:{lineno}")
    return out


def _coerce(key: str, value: str, schema: dict, where: str):
    if key not in schema:
        raise UsageError(f"{where}: unknown key {key!r}")
    try:
        return schema[key](value)
    except ValueError as exc:
        raise UsageError(f"{where}: bad value for {key!r}: {exc}") from None


def read_kv_file(path, schema: dict) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_kv_lines(fh, schema, str(path))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None


class RunConfig:
    """Config-file settings overridden by flags, validated against RUN_SCHEMA."""

    def __init__(self, settings: dict | None = None):
        self.settings = dict(settings or {})

    @classmethod
    def load(cls, path=None, overrides: list[str] | None = None, **flags) -> "RunConfig":
        settings = read_kv_file(path, RUN_SCHEMA) if path else {}
        for item in overrides or []:
            if "=" not in item:
                raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = (s.strip() for s in item.split("=", 1))
            settings[k] = _coerce(k, v, RUN_SCHEMA, "--set")
        settings.update({k: v for k, v in flags.items() if v is not None})
        return cls(settings)

    def get(self, key, default=None):
        return self.settings.get(key, default)

    def corpus_config(self) -> CorpusConfig:
        s = self.settings
        return CorpusConfig(
            max_sentences=s.get("max_sentences", 20),
            max_sentence_len=s.get("max_sentence_len", 150),
            tokenization=s.get("tokenization", "char"),
            min_count=s.get("min_count", 1),
        )

    def model_config(self, vocab_size: int) -> ModelConfig:
        keys = ("embed_dim", "hidden_dim", "position_dim", "mlp_hidden", "max_sentences",
                "attention", "swd", "detach_weights", "init_scale", "seed")
        return ModelConfig(vocab_size=vocab_size,
                           **{k: self.settings[k] for k in keys if k in self.settings})

    def train_config(self) -> TrainConfig:
        s = dict(self.settings)
        if "lambda" in s:
            s["lam"] = s.pop("lambda")
        return TrainConfig.from_dict(s)


BASELINES = {
    "rnn": {"attention": False, "swd": False, "lambda": 0.0},
    "rnn-context": {"attention": True, "swd": False, "lambda": 0.0},
    "swd": {"swd": True},
}


def model_tag(cfg: ModelConfig) -> str:
    base = "RNN-context" if cfg.attention else "RNN"
    return base + ("+SWD" if cfg.swd else "")


# ---------------------------------------------------------------------------
# helpers


def _variant(v: str) -> str:
    v = v.lower()
    return v if v.startswith("rouge-") else f"rouge-{v}"


def _measure(m: str) -> str:
    return {"p": "precision", "r": "recall", "f": "f"}.get(m.lower(), m.lower())


def _corpus_vocab(corpus_path, pairs, cfg: CorpusConfig, explicit=None) -> tuple[Vocab, str]:
    if explicit:
        return Vocab.load(explicit, cfg.tokenization), str(explicit)
    sidecar = vocab_path_for(corpus_path)
    if sidecar.exists():
        return Vocab.load(sidecar, cfg.tokenization), str(sidecar)
    return build_vocab(pairs, cfg.min_count, cfg.tokenization), ""


def _resolve_vocab(ckpt: Checkpoint, ckpt_path) -> Path:
    p = Path(ckpt.vocab_path)
    return p if p.is_absolute() else Path(ckpt_path).parent / p


def _load_model(path) -> tuple[SWDModel, Vocab, Checkpoint, Path]:
    ckpt = load_checkpoint(path)
    vpath = _resolve_vocab(ckpt, path)
    tokenization = ckpt.meta.get("corpus_config", {}).get("tokenization", "char")
    vocab = Vocab.load(vpath, tokenization)
    if len(vocab) != ckpt.model_config.vocab_size:
        raise CompatibilityError(f"{vpath} has {len(vocab)} entries but the checkpoint "
                                 f"expects {ckpt.model_config.vocab_size}")
    return ckpt.to_model(), vocab, ckpt, vpath


def _corpus_config_from(ckpt: Checkpoint) -> CorpusConfig:
    d = dict(ckpt.meta.get("corpus_config", {}))
    d.pop("delimiters", None)
    return CorpusConfig(**d)


# ---------------------------------------------------------------------------
# subcommands


def cmd_rouge(args) -> int:
    cand = Path(args.candidate).read_text(encoding="utf-8").splitlines()
    ref = Path(args.reference).read_text(encoding="utf-8").splitlines()
    if len(cand) != len(ref):
        raise FormatError(f"{args.candidate} has {len(cand)} lines, "
                          f"{args.reference} has {len(ref)}")
    units = Vocab((), args.tokenization).units
    out = sys.stdout
    out.write("line\tP\tR\tF\n")
    tot = [0.0, 0.0, 0.0]
    for k, (c, r) in enumerate(zip(cand, ref), 1):
        s = rouge(units(c), units(r), _variant(args.variant), args.beta)
        vals = (s.precision, s.recall, s.f)
        tot = [a + b for a, b in zip(tot, vals)]
        out.write(f"{k}\t" + "\t".join(f"{100 * v:.1f}" for v in vals) + "\n")
    n = max(len(cand), 1)
    out.write("mean\t" + "\t".join(f"{100 * v / n:.1f}" for v in tot) + "\n")
    return 0


def cmd_estimate_weights(args) -> int:
    rc = RunConfig.load(args.config, args.set)
    ccfg = rc.corpus_config()
    pairs = read_pairs(args.corpus, args.format or rc.get("corpus_format", "jsonl"))
    vocab, _ = _corpus_vocab(args.corpus, pairs, ccfg, args.vocab)
    examples = encode_corpus(pairs, vocab, ccfg)
    variant = _variant(args.variant or rc.get("variant", "1"))
    measure = _measure(args.measure or rc.get("measure", "f"))
    write_weights(args.out, estimate_corpus_weights(examples, variant, measure))
    return 0


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec.from_dict(read_kv_file(args.spec, SYNTH_SCHEMA))
    except UsageError as exc:
        raise GenerationError(str(exc)) from None
    corpus = generate(spec)
    write_corpus(corpus, args.out, args.name)
    return 0


def cmd_train(args) -> int:
    flags = {"epochs": args.epochs, "lambda": args.lam, "learning_rate": args.learning_rate,
             "batch_size": args.batch_size, "seed": args.seed}
    rc = RunConfig.load(args.config, args.set, **flags)
    if args.baseline:
        rc.settings.update(BASELINES[args.baseline])
    ccfg = rc.corpus_config()
    pairs = read_pairs(args.corpus, args.format or rc.get("corpus_format", "jsonl"))
    vocab, _ = _corpus_vocab(args.corpus, pairs, ccfg, args.vocab)
    examples = encode_corpus(pairs, vocab, ccfg)
    attach_weights(examples, read_weights(args.weights))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    mcfg = rc.model_config(len(vocab))
    tcfg = rc.train_config()
    valid = None
    if args.valid:
        vpairs = read_pairs(args.valid, args.format or rc.get("corpus_format", "jsonl"))
        valid = encode_corpus(vpairs, vocab, ccfg)
    model = SWDModel(mcfg)
    result = train(examples, model, tcfg, out_dir=out, vocab_path="vocab.txt", valid=valid)
    ckpt = result.checkpoint
    ccfg_d = asdict(ccfg)
    ccfg_d.pop("delimiters")
    ckpt.meta.update({"tag": model_tag(mcfg), "corpus_config": ccfg_d})
    save_checkpoint(ckpt, out / "model.json")
    return 0


def cmd_generate(args) -> int:
    model, vocab, ckpt, _ = _load_model(args.model)
    ccfg = _corpus_config_from(ckpt)
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    docs, slots = [], []
    for k, line in enumerate(lines):
        if line.strip():
            docs.append(encode_document(line, vocab, ccfg))
            slots.append(k)
    outputs = [""] * len(lines)
    bs = 32
    for start in range(0, len(docs), bs):
        for k, ids in zip(slots[start:start + bs], model.summarize(docs[start:start + bs],
                                                                    args.max_len)):
            outputs[k] = vocab.decode(ids)
    sys.stdout.write("".join(o + "\n" for o in outputs))
    return 0


def cmd_evaluate(args) -> int:
    model, vocab, ckpt, vpath = _load_model(args.model)
    ccfg = _corpus_config_from(ckpt)
    pairs = read_pairs(args.corpus, args.format or "jsonl")
    explicit = args.vocab or (vocab_path_for(args.corpus) if vocab_path_for(args.corpus).exists()
                              else None)
    if explicit:
        corpus_vocab = Vocab.load(explicit, vocab.tokenization)
        if corpus_vocab != vocab:
            raise CompatibilityError(f"vocabulary mismatch: checkpoint uses {vpath}, "
                                     f"corpus uses {explicit}")
    examples = encode_corpus(pairs, vocab, ccfg)
    tag = args.tag or ckpt.meta.get("tag") or model_tag(model.config)
    report = evaluate(model, examples, tag, max_len=args.max_len)
    sys.stdout.write(format_report([report], detail=args.detail))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="swdsum", description="Sentence-weighted abstractive summarization.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    r = sub.add_parser("rouge", help="score candidate lines against reference lines")
    r.add_argument("--candidate", required=True, metavar="FILE", help="one candidate per line")
    r.add_argument("--reference", required=True, metavar="FILE", help="one reference per line")
    r.add_argument("--variant", default="1", choices=["1", "2", "l", "L"],
                   help="ROUGE-1, ROUGE-2 or ROUGE-L (default 1)")
    r.add_argument("--beta", type=float, default=1.0, help="F-measure beta (default 1)")
    r.add_argument("--tokenization", default="char", choices=["char", "word"],
                   help="token unit (default char)")
    r.set_defaults(func=cmd_rouge)

    e = sub.add_parser("estimate-weights", help="write gold sentence weights for a corpus")
    e.add_argument("--corpus", required=True, metavar="FILE", help="JSON-lines corpus")
    e.add_argument("--out", required=True, metavar="FILE", help="weight sidecar to write")
    e.add_argument("--variant", choices=["1", "2", "l"], help="ROUGE variant (default 1)")
    e.add_argument("--measure", choices=["p", "r", "f"], help="ROUGE component (default f)")
    e.add_argument("--config", metavar="FILE", help="key = value settings file")
    e.add_argument("--vocab", metavar="FILE", help="vocabulary file (default: built)")
    e.add_argument("--format", choices=["jsonl", "tsv"], help="corpus format")
    e.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a setting")
    e.set_defaults(func=cmd_estimate_weights)

    s = sub.add_parser("synth", help="generate a synthetic needle corpus")
    s.add_argument("--spec", required=True, metavar="FILE", help="key = value generator spec")
    s.add_argument("--out", required=True, metavar="DIR", help="output directory")
    s.add_argument("--name", default="corpus", help="file stem (default corpus)")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", metavar="FILE", help="key = value settings file")
    t.add_argument("--corpus", required=True, metavar="FILE", help="training corpus")
    t.add_argument("--weights", required=True, metavar="FILE", help="weight sidecar")
    t.add_argument("--out", required=True, metavar="DIR", help="output directory")
    t.add_argument("--baseline", choices=sorted(BASELINES),
                   help="rnn: no attention, no weights; rnn-context: attention, no weights; "
                        "swd: sentence weights on")
    t.add_argument("--valid", metavar="FILE", help="validation corpus for best.json")
    t.add_argument("--vocab", metavar="FILE", help="vocabulary file (default: built)")
    t.add_argument("--format", choices=["jsonl", "tsv"], help="corpus format")
    t.add_argument("--epochs", type=int, help="override epochs")
    t.add_argument("--lambda", dest="lam", type=float, help="override lambda")
    t.add_argument("--learning-rate", type=float, help="override learning rate")
    t.add_argument("--batch-size", type=int, help="override batch size")
    t.add_argument("--seed", type=int, help="override seed")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a setting")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="summarize one document per input line")
    g.add_argument("--model", required=True, metavar="FILE", help="checkpoint")
    g.add_argument("--input", required=True, metavar="FILE", help="one document per line")
    g.add_argument("--max-len", type=int, default=30, help="maximum summary length")
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("evaluate", help="ROUGE report of a checkpoint on a corpus")
    v.add_argument("--model", required=True, metavar="FILE", help="checkpoint")
    v.add_argument("--corpus", required=True, metavar="FILE", help="corpus with references")
    v.add_argument("--vocab", metavar="FILE", help="the corpus vocabulary, checked against "
                                                   "the checkpoint's")
    v.add_argument("--format", choices=["jsonl", "tsv"], help="corpus format")
    v.add_argument("--tag", help="row label (default: from the checkpoint)")
    v.add_argument("--max-len", type=int, help="maximum summary length")
    v.add_argument("--detail", action="store_true", help="add precision/recall columns")
    v.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("no subcommand given; see --help")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s", stream=sys.stderr)
        return args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 3
    except (SwdError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
