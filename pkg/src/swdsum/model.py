"""Encoder-decoder summarizer with a learned sentence weight distribution.

Shapes used throughout (batch-major):

    B  batch size            L  source tokens        S  sentences
    T  decoder steps         d_e embedding width     d_h encoder/decoder width

The encoder is a bidirectional LSTM with ``d_h // 2`` units per direction.
Sentence representations are sums of raw word embeddings; together with a
learned sentence-position embedding they feed a one-hidden-layer MLP whose
masked softmax gives the predicted weights.  Every encoder state is scaled by
the weight of its sentence before it reaches the decoder.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import BOS, EOS, PAD, Batch, Document, collate, Example
from .errors import DegenerateInputError, DimensionError, VocabularyError
from .tensor import Tensor


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 64
    max_sentences: int = 20
    position_dim: int = 16
    mlp_hidden: int = 64
    attention: bool = True
    swd: bool = True
    # weights are still predicted and supervised, but do not rescale states
    detach_weights: bool = False
    init_scale: float = 0.08
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "max_sentences",
                     "position_dim", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden_dim % 2:
            raise ValueError("hidden_dim must be even (it is split across two directions)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# full-scale widths; everything else keeps its default
FULL_SCALE_DIMS = {"embed_dim": 400, "hidden_dim": 512}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    V, de, dh = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim
    hd = dh // 2
    ctx = dh if cfg.attention else 0
    shapes = {
        "embedding": (V, de),
        "enc_fwd_Wx": (de, 4 * hd), "enc_fwd_Wh": (hd, 4 * hd), "enc_fwd_b": (4 * hd,),
        "enc_bwd_Wx": (de, 4 * hd), "enc_bwd_Wh": (hd, 4 * hd), "enc_bwd_b": (4 * hd,),
        "init_W": (dh, dh), "init_b": (dh,),
        "dec_Wx": (de + ctx, 4 * dh), "dec_Wh": (dh, 4 * dh), "dec_b": (4 * dh,),
        "out_W": (dh, V), "out_b": (V,),
    }
    if cfg.attention:
        shapes.update({"att_Wh": (dh, dh), "att_Ws": (dh, dh), "att_v": (dh, 1)})
    if cfg.swd:
        shapes.update({
            "pos_embedding": (cfg.max_sentences, cfg.position_dim),
            "mlp_W1": (de + cfg.position_dim, cfg.mlp_hidden), "mlp_b1": (cfg.mlp_hidden,),
            "mlp_W2": (cfg.mlp_hidden, 1), "mlp_b2": (1,),
        })
    return shapes


SWD_PARAMS = ("pos_embedding", "mlp_W1", "mlp_b1", "mlp_W2", "mlp_b2")


def init_params(cfg: ModelConfig) -> dict[str, Tensor]:
    """Uniform(-init_scale, init_scale); each array draws from its own stream
    keyed by (seed, name), so toggling optional blocks leaves the rest intact."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        rng = np.random.default_rng([cfg.seed, zlib.crc32(name.encode())])
        params[name] = Tensor(rng.uniform(-cfg.init_scale, cfg.init_scale, shape),
                              requires_grad=True, name=name)
    return params


# ---------------------------------------------------------------------------
# building blocks


def lstm_cell(zx: Tensor, h: Tensor, c: Tensor, Wh: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step; ``zx`` already holds the input projection plus bias."""
    n = h.shape[1]
    z = T.add(zx, T.matmul(h, Wh))
    i = T.sigmoid(z[:, :n])
    f = T.sigmoid(z[:, n:2 * n])
    g = T.tanh(z[:, 2 * n:3 * n])
    o = T.sigmoid(z[:, 3 * n:])
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    return T.mul(o, T.tanh(c_new)), c_new


def fused_lstm_cell(zx: Tensor, h: Tensor, c: Tensor, Wh: Tensor) -> tuple[Tensor, Tensor]:
    """Same map as :func:`lstm_cell`, recorded as a single tape node."""
    n = h.shape[1]
    z = zx.data + h.data @ Wh.data
    sg = 0.5 * (1.0 + np.tanh(0.5 * z[:, [*range(n), *range(n, 2 * n), *range(3 * n, 4 * n)]]))
    i, f, o = sg[:, :n], sg[:, n:2 * n], sg[:, 2 * n:]
    g = np.tanh(z[:, 2 * n:3 * n])
    c_new = f * c.data + i * g
    tc = np.tanh(c_new)
    h_new = o * tc

    def fn(grad):
        gh, gc = grad[:, :n], grad[:, n:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.empty_like(z)
        dz[:, :n] = dc * g * i * (1.0 - i)
        dz[:, n:2 * n] = dc * c.data * f * (1.0 - f)
        dz[:, 2 * n:3 * n] = dc * i * (1.0 - g * g)
        dz[:, 3 * n:] = gh * tc * o * (1.0 - o)
        return dz, dz @ Wh.data.T, dc * f, h.data.T @ dz

    both = T.custom_op(np.concatenate([h_new, c_new], axis=1), (zx, h, c, Wh), fn, "lstm_cell")
    return both[:, :n], both[:, n:]


def _affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    y = T.matmul(x, W)
    return T.add(y, T.expand(b, y.shape))


def _run_lstm(x: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor, cell=fused_lstm_cell) -> Tensor:
    """Unidirectional LSTM over ``x[B, L, d]`` from position 0; returns [B, L, n]."""
    B, L, d = x.shape
    n = Wh.shape[0]
    zx = T.reshape(_affine(T.reshape(x, (B * L, d)), Wx, b), (B, L, 4 * n))
    h = Tensor(np.zeros((B, n)))
    c = Tensor(np.zeros((B, n)))
    outs = []
    for t in range(L):
        h, c = cell(zx[:, t, :], h, c, Wh)
        outs.append(h)
    return T.stack(outs, axis=1)


def _lengths(mask: np.ndarray) -> np.ndarray:
    return mask.sum(axis=1).astype(np.int64)


def _reverse_index(mask: np.ndarray) -> np.ndarray:
    """``idx[b, t] = len_b - 1 - t`` on real positions, 0 on padding."""
    lengths = _lengths(mask)
    t = np.arange(mask.shape[1])[None, :]
    return np.where(t < lengths[:, None], lengths[:, None] - 1 - t, 0)


def encode(src: np.ndarray, mask: np.ndarray, params: dict[str, Tensor],
           embedded: Tensor | None = None, fused: bool = True) -> Tensor:
    """Bidirectional LSTM states ``h[B, L, d_h]``; padded positions are zero.

    The backward direction runs over each sequence reversed within its own
    length, so right-padding never leaks into real states.
    """
    src = np.asarray(src)
    mask = np.asarray(mask, dtype=bool)
    if src.ndim != 2 or not mask.any(axis=1).all():
        raise DegenerateInputError("every source row needs at least one real token")
    B, L = src.shape
    x = embedded if embedded is not None else T.embedding_lookup(params["embedding"], src)
    cell = fused_lstm_cell if fused else lstm_cell
    fwd = _run_lstm(x, params["enc_fwd_Wx"], params["enc_fwd_Wh"], params["enc_fwd_b"], cell)

    rev = _reverse_index(mask)
    rows = np.broadcast_to(np.arange(B)[:, None], (B, L))
    x_rev = x[rows, rev]
    bwd_rev = _run_lstm(x_rev, params["enc_bwd_Wx"], params["enc_bwd_Wh"], params["enc_bwd_b"],
                        cell)
    bwd = bwd_rev[rows, rev]

    h = T.concat([fwd, bwd], axis=2)
    keep = np.broadcast_to(mask[:, :, None], h.shape).astype(np.float64)
    return T.mul(h, Tensor(keep))


def sentence_embeddings(x: Tensor, word2sen: np.ndarray, n_sentences: int,
                        mask: np.ndarray | None = None) -> Tensor:
    """``s[b, j] = sum of x[b, i]`` over the words i of sentence j."""
    return T.segment_sum(x, word2sen, n_sentences, mask)


def predict_sentence_weights(s: Tensor, sent_mask: np.ndarray,
                             params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Masked softmax of ``MLP([s_j, pos_j])``; returns (weights, log-weights)."""
    sent_mask = np.asarray(sent_mask, dtype=bool)
    if not sent_mask.any(axis=1).all():
        raise DegenerateInputError("every document needs at least one real sentence")
    B, S, de = s.shape
    table = params["pos_embedding"]
    if S > table.shape[0]:
        raise VocabularyError(f"{S} sentences exceed the {table.shape[0]} position embeddings")
    pos = T.embedding_lookup(table, np.broadcast_to(np.arange(S), (B, S)))
    feats = T.reshape(T.concat([s, pos], axis=2), (B * S, de + table.shape[1]))
    hidden = T.tanh(_affine(feats, params["mlp_W1"], params["mlp_b1"]))
    logits = T.reshape(_affine(hidden, params["mlp_W2"], params["mlp_b2"]), (B, S))
    return T.softmax_rows(logits, sent_mask), T.log_softmax_rows(logits, sent_mask)


def reweight_states(h: Tensor, weights: Tensor, word2sen: np.ndarray) -> Tensor:
    """``h'[b, i] = weights[b, word2sen[b, i]] * h[b, i]``."""
    B, L, d = h.shape
    per_token = T.reshape(T.gather_cols(weights, word2sen), (B, L, 1))
    return T.mul(h, T.expand(per_token, (B, L, d)))


def attention_keys(hp: Tensor, params: dict[str, Tensor]) -> Tensor:
    B, L, d = hp.shape
    return T.reshape(T.matmul(T.reshape(hp, (B * L, d)), params["att_Wh"]), (B, L, -1))


def attention_context(state: Tensor, hp: Tensor, src_mask: np.ndarray,
                      params: dict[str, Tensor], keys: Tensor | None = None
                      ) -> tuple[Tensor, Tensor]:
    """Additive attention over ``hp``; returns (context[B, d_h], alpha[B, L])."""
    B, L, d = hp.shape
    if keys is None:
        keys = attention_keys(hp, params)
    a = keys.shape[2]
    q = T.reshape(T.matmul(state, params["att_Ws"]), (B, 1, a))
    e = T.tanh(T.add(keys, T.expand(q, (B, L, a))))
    scores = T.reshape(T.matmul(T.reshape(e, (B * L, a)), params["att_v"]), (B, L))
    alpha = T.softmax_rows(scores, src_mask)
    weighted = T.mul(hp, T.expand(T.reshape(alpha, (B, L, 1)), (B, L, d)))
    return T.sum(weighted, axis=1), alpha


def fused_attention_context(state: Tensor, hp: Tensor, keys: Tensor, src_mask: np.ndarray,
                            Ws: Tensor, v: Tensor) -> Tensor:
    """Same context vector as :func:`attention_context`, as one tape node."""
    mask = np.asarray(src_mask, dtype=bool)
    E = np.tanh(keys.data + (state.data @ Ws.data)[:, None, :])
    scores = E @ v.data[:, 0]
    scores = np.where(mask, scores - np.where(mask, scores, -np.inf).max(axis=1, keepdims=True),
                      -np.inf)
    alpha = np.exp(scores)
    alpha /= alpha.sum(axis=1, keepdims=True)
    H = hp.data
    ctx = np.einsum("bl,bld->bd", alpha, H)

    def fn(g):
        d_h = alpha[:, :, None] * g[:, None, :]
        d_alpha = np.einsum("bld,bd->bl", H, g)
        d_scores = alpha * (d_alpha - np.sum(alpha * d_alpha, axis=1, keepdims=True))
        d_v = np.einsum("bla,bl->a", E, d_scores)[:, None]
        d_pre = d_scores[:, :, None] * v.data[:, 0] * (1.0 - E * E)
        d_q = d_pre.sum(axis=1)
        return d_q @ Ws.data.T, d_h, d_pre, state.data.T @ d_q, d_v

    return T.custom_op(ctx, (state, hp, keys, Ws, v), fn, "attention")


@dataclass
class EncoderOutput:
    states: Tensor              # raw h [B, L, d_h]
    weights: Tensor | None      # w' [B, S]
    log_weights: Tensor | None  # log w' [B, S], 0 on padding
    reweighted: Tensor          # h' [B, L, d_h]
    src_mask: np.ndarray
    sent_mask: np.ndarray
    keys: Tensor | None = None
    init_state: Tensor | None = None


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor


class SWDModel:
    """Parameters plus the forward computations that use them.

    ``fused=False`` swaps the single-node LSTM and attention ops for their
    compositions of primitives (slower; used to cross-check the fused ones).
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None,
                 fused: bool = True):
        self.config = config
        self.fused = fused
        self.params = params if params is not None else init_params(config)
        expected = param_shapes(config)
        if set(self.params) != set(expected):
            raise DimensionError(
                f"parameter names {sorted(self.params)} do not match config {sorted(expected)}"
            )
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise DimensionError(f"parameter {name}: shape {self.params[name].shape}, "
                                     f"expected {shape}")

    # -- encoder ------------------------------------------------------------

    def encoder_output(self, batch: Batch) -> EncoderOutput:
        p, cfg = self.params, self.config
        x = T.embedding_lookup(p["embedding"], batch.src)
        h = encode(batch.src, batch.src_mask, p, embedded=x, fused=self.fused)
        weights = log_weights = None
        hp = h
        if cfg.swd:
            s = sentence_embeddings(x, batch.word2sen, batch.sent_mask.shape[1], batch.src_mask)
            weights, log_weights = predict_sentence_weights(s, batch.sent_mask, p)
            if not cfg.detach_weights:
                hp = reweight_states(h, weights, batch.word2sen)
        out = EncoderOutput(h, weights, log_weights, hp, batch.src_mask, batch.sent_mask)
        if cfg.attention:
            out.keys = attention_keys(hp, p)
        out.init_state = self._initial_state(hp, batch.src_mask)
        return out

    def _initial_state(self, hp: Tensor, mask: np.ndarray) -> Tensor:
        """tanh(affine([forward state at the last token, backward state at the first]))."""
        B, L, d = hp.shape
        last = _lengths(mask) - 1
        fwd_last = hp[np.arange(B), last][:, : d // 2]
        bwd_first = hp[:, 0, d // 2:]
        return T.tanh(_affine(T.concat([fwd_last, bwd_first], axis=1),
                              self.params["init_W"], self.params["init_b"]))

    def initial_decoder_state(self, enc: EncoderOutput) -> DecoderState:
        B = enc.init_state.shape[0]
        return DecoderState(enc.init_state, Tensor(np.zeros((B, self.config.hidden_dim))))

    # -- decoder ------------------------------------------------------------

    def decoder_cell(self, prev_tokens: np.ndarray, state: DecoderState,
                     enc: EncoderOutput) -> DecoderState:
        p = self.params
        inp = T.embedding_lookup(p["embedding"], np.asarray(prev_tokens))
        if self.config.attention:
            if self.fused:
                ctx = fused_attention_context(state.h, enc.reweighted, enc.keys, enc.src_mask,
                                              p["att_Ws"], p["att_v"])
            else:
                ctx, _ = attention_context(state.h, enc.reweighted, enc.src_mask, p, enc.keys)
            inp = T.concat([inp, ctx], axis=1)
        cell = fused_lstm_cell if self.fused else lstm_cell
        h, c = cell(_affine(inp, p["dec_Wx"], p["dec_b"]), state.h, state.c, p["dec_Wh"])
        return DecoderState(h, c)

    def output_logits(self, h: Tensor) -> Tensor:
        return _affine(h, self.params["out_W"], self.params["out_b"])

    def decode_step(self, prev_tokens, state: DecoderState, enc: EncoderOutput
                    ) -> tuple[Tensor, DecoderState]:
        """Next-token distribution [B, V] and the new state."""
        new = self.decoder_cell(prev_tokens, state, enc)
        return T.softmax_rows(self.output_logits(new.h)), new

    def target_log_probs(self, batch: Batch, enc: EncoderOutput) -> Tensor:
        """Teacher-forced ``log p(y_t | y_<t, X)`` for every target step, [B, T].

        Entries at padded target positions are meaningless and must be masked
        by the caller.
        """
        B, M = batch.tgt.shape
        steps = M - 1
        state = self.initial_decoder_state(enc)
        hs = []
        for t in range(steps):
            state = self.decoder_cell(batch.tgt[:, t], state, enc)
            hs.append(state.h)
        H = T.reshape(T.stack(hs, axis=1), (B * steps, self.config.hidden_dim))
        logp = T.log_softmax_rows(self.output_logits(H))
        gold = batch.tgt[:, 1:].reshape(B * steps, 1)
        return T.reshape(T.gather_cols(logp, gold), (B, steps))

    # -- inference ----------------------------------------------------------

    def greedy_decode(self, batch: Batch, max_len: int) -> list[list[int]]:
        """Argmax decoding from BOS; stops at EOS or ``max_len`` tokens.

        PAD and BOS are never emitted; ties go to the lowest token id.
        """
        B = batch.size
        if max_len <= 0:
            return [[] for _ in range(B)]
        out: list[list[int]] = [[] for _ in range(B)]
        with T.no_grad():
            enc = self.encoder_output(batch)
            state = self.initial_decoder_state(enc)
            prev = np.full(B, BOS, dtype=np.int64)
            done = np.zeros(B, dtype=bool)
            for _ in range(max_len):
                state = self.decoder_cell(prev, state, enc)
                logits = self.output_logits(state.h).data.copy()
                logits[:, [PAD, BOS]] = -np.inf
                nxt = np.argmax(logits, axis=1)
                for b in np.flatnonzero(~done):
                    if nxt[b] == EOS:
                        done[b] = True
                    else:
                        out[b].append(int(nxt[b]))
                if done.all():
                    break
                prev = nxt
        return out

    def predict_weights(self, batch: Batch) -> list[np.ndarray]:
        """Predicted sentence weights per document (real sentences only)."""
        if not self.config.swd:
            raise ValueError("model was built without the sentence-weight path")
        with T.no_grad():
            enc = self.encoder_output(batch)
        w = enc.weights.data
        return [w[b, batch.sent_mask[b]] for b in range(batch.size)]

    def summarize(self, documents: Sequence[Document], max_len: int) -> list[list[int]]:
        batch = collate([Example(doc, [EOS]) for doc in documents])
        return self.greedy_decode(batch, max_len)
