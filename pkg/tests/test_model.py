import numpy as np
import pytest

from swdsum import tensor as T
from swdsum.corpus import BOS, EOS, PAD, Document, Example, collate
from swdsum.errors import DegenerateInputError, DimensionError, VocabularyError
from swdsum.model import (
    SWD_PARAMS,
    ModelConfig,
    SWDModel,
    attention_context,
    encode,
    fused_attention_context,
    fused_lstm_cell,
    init_params,
    lstm_cell,
    param_shapes,
    predict_sentence_weights,
    reweight_states,
    sentence_embeddings,
)
from swdsum.tensor import Tensor
from swdsum.trainer import joint_loss

V = 12


def tiny_config(**kw):
    base = dict(vocab_size=V, embed_dim=4, hidden_dim=6, position_dim=3, mlp_hidden=5,
                max_sentences=6)
    base.update(kw)
    return ModelConfig(**base)


def zeroed(params):
    return {k: Tensor(np.zeros(p.shape), requires_grad=True, name=k) for k, p in params.items()}


def make_batch(docs, summaries=None, weights=True):
    items = []
    for k, sents in enumerate(docs):
        doc = Document([list(s) for s in sents])
        summ = list(summaries[k]) if summaries else [4, 5]
        w = np.full(doc.n_sentences, 1.0 / doc.n_sentences) if weights else None
        items.append(Example(doc, summ, weights=w))
    return collate(items)


def rand_docs(rng, n_docs=3, max_sents=3, max_len=4):
    return [[rng.integers(4, V, size=rng.integers(1, max_len + 1)).tolist()
             for _ in range(rng.integers(1, max_sents + 1))] for _ in range(n_docs)]


# -- configuration and parameters ---------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, hidden_dim=7)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=0)
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"vocab_size": 10, "colour": 1})
    cfg = tiny_config(attention=False)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_optional_blocks_change_only_their_params():
    full = init_params(tiny_config())
    bare = init_params(tiny_config(swd=False, attention=False))
    assert set(full) - set(bare) == set(SWD_PARAMS) | {"att_Wh", "att_Ws", "att_v"}
    for name, p in bare.items():
        if p.shape == full[name].shape:
            np.testing.assert_array_equal(p.data, full[name].data)


def test_init_is_seeded_and_bounded():
    a, b = init_params(tiny_config(seed=3)), init_params(tiny_config(seed=3))
    c = init_params(tiny_config(seed=4))
    for k in a:
        np.testing.assert_array_equal(a[k].data, b[k].data)
        assert np.abs(a[k].data).max() <= 0.08
    assert any(not np.array_equal(a[k].data, c[k].data) for k in a)


def test_param_shape_validation():
    cfg = tiny_config()
    params = init_params(cfg)
    params["out_W"] = Tensor(np.zeros((3, 3)))
    with pytest.raises(DimensionError):
        SWDModel(cfg, params)
    params = init_params(cfg)
    del params["mlp_W1"]
    with pytest.raises(DimensionError):
        SWDModel(cfg, params)


def test_full_scale_shapes():
    shapes = param_shapes(ModelConfig(vocab_size=100, embed_dim=400, hidden_dim=512))
    assert shapes["embedding"] == (100, 400)
    assert shapes["enc_fwd_Wh"] == (256, 1024)
    assert shapes["out_W"] == (512, 100)


# -- encoder -------------------------------------------------------------------


def test_zero_params_give_zero_states():
    cfg = tiny_config()
    p = zeroed(init_params(cfg))
    h = encode(np.array([[4, 5, 6]]), np.ones((1, 3), bool), p)
    assert h.shape == (1, 3, 6)
    assert not h.data.any()


def tied_params(cfg):
    p = init_params(cfg)
    for part in ("Wx", "Wh", "b"):
        p[f"enc_bwd_{part}"] = Tensor(p[f"enc_fwd_{part}"].data.copy())
    return p


def test_direction_symmetry_on_two_tokens():
    cfg = tiny_config()
    p = tied_params(cfg)
    mask = np.ones((1, 2), bool)
    h_ab = encode(np.array([[4, 7]]), mask, p).data[0]
    h_ba = encode(np.array([[7, 4]]), mask, p).data[0]
    n = cfg.hidden_dim // 2
    np.testing.assert_allclose(h_ab[:, :n], h_ba[::-1, n:], atol=1e-15)
    np.testing.assert_allclose(h_ab[:, n:], h_ba[::-1, :n], atol=1e-15)


def test_single_token_conditions_both_directions_on_it():
    cfg = tiny_config()
    p = tied_params(cfg)
    h = encode(np.array([[9]]), np.ones((1, 1), bool), p).data[0, 0]
    np.testing.assert_allclose(h[:3], h[3:], atol=1e-15)
    assert np.abs(h).max() > 0


@pytest.mark.parametrize("fused", [True, False])
def test_padding_does_not_leak(fused):
    cfg = tiny_config()
    p = init_params(cfg)
    seqs = [[4, 5, 6, 7, 8], [9, 10]]
    src = np.array([seqs[0], seqs[1] + [PAD] * 3])
    mask = src != PAD
    h = encode(src, mask, p, fused=fused).data
    alone = encode(np.array([seqs[1]]), np.ones((1, 2), bool), p, fused=fused).data
    np.testing.assert_allclose(h[1, :2], alone[0], atol=1e-15)
    assert not h[1, 2:].any()


def test_encode_needs_a_real_token():
    p = init_params(tiny_config())
    with pytest.raises(DegenerateInputError):
        encode(np.array([[PAD, PAD]]), np.zeros((1, 2), bool), p)


# -- sentence representations and weights ----------------------------------------


def test_sentence_sums():
    x = Tensor(np.arange(12, dtype=float).reshape(1, 4, 3))
    s = sentence_embeddings(x, np.array([[0, 1, 1, 2]]), 3).data[0]
    np.testing.assert_array_equal(s[0], x.data[0, 0])
    np.testing.assert_array_equal(s[1], x.data[0, 1] + x.data[0, 2])
    doubled = sentence_embeddings(Tensor(2 * x.data), np.array([[0, 1, 1, 2]]), 3).data[0]
    np.testing.assert_array_equal(doubled, 2 * s)


def test_identical_words_sum_twice():
    x = Tensor(np.array([[[1.0, -2.0], [1.0, -2.0]]]))
    s = sentence_embeddings(x, np.array([[0, 0]]), 1).data
    np.testing.assert_array_equal(s[0, 0], [2.0, -4.0])


def test_zero_mlp_gives_uniform_weights_over_real_sentences():
    cfg = tiny_config()
    p = init_params(cfg)
    for k in ("mlp_W1", "mlp_b1", "mlp_W2", "mlp_b2"):
        p[k] = Tensor(np.zeros(p[k].shape))
    s = Tensor(np.random.default_rng(0).normal(size=(2, 4, cfg.embed_dim)))
    mask = np.array([[1, 1, 1, 0], [1, 0, 0, 0]], bool)
    w, logw = predict_sentence_weights(s, mask, p)
    np.testing.assert_allclose(w.data[0], [1 / 3, 1 / 3, 1 / 3, 0], atol=1e-15)
    assert w.data[1].tolist() == [1.0, 0.0, 0.0, 0.0]
    np.testing.assert_allclose(logw.data[0, :3], np.log(1 / 3))
    assert logw.data[0, 3] == 0.0


def test_position_distinguishes_identical_sentences():
    cfg = tiny_config()
    model = SWDModel(cfg)
    w = model.predict_weights(make_batch([[[4, 5], [4, 5]]]))[0]
    assert abs(w[0] - w[1]) > 1e-6


def test_single_sentence_weight_is_one():
    model = SWDModel(tiny_config())
    assert model.predict_weights(make_batch([[[4, 5, 6]]]))[0].tolist() == [1.0]


def test_weight_prediction_errors():
    cfg = tiny_config()
    p = init_params(cfg)
    with pytest.raises(DegenerateInputError):
        predict_sentence_weights(Tensor(np.ones((1, 2, 4))), np.zeros((1, 2), bool), p)
    with pytest.raises(VocabularyError):
        predict_sentence_weights(Tensor(np.ones((1, 7, 4))), np.ones((1, 7), bool), p)


def test_weight_permutation_equivariance():
    cfg = tiny_config()
    model = SWDModel(cfg)
    rng = np.random.default_rng(4)
    sents = [rng.integers(4, V, size=3).tolist() for _ in range(4)]
    perm = [2, 0, 3, 1]
    w = model.predict_weights(make_batch([sents]))[0]
    params = dict(model.params)
    table = params["pos_embedding"].data.copy()
    table[:4] = table[perm]
    params["pos_embedding"] = Tensor(table)
    moved = SWDModel(cfg, params).predict_weights(make_batch([[sents[k] for k in perm]]))[0]
    np.testing.assert_allclose(moved, w[perm], atol=1e-15)


def test_weights_are_distributions_on_random_batches():
    model = SWDModel(tiny_config())
    rng = np.random.default_rng(5)
    for _ in range(10):
        batch = make_batch(rand_docs(rng, 4, 5))
        for w, n in zip(model.predict_weights(batch), batch.sent_mask.sum(1)):
            assert len(w) == n and (w > 0).all() and abs(w.sum() - 1) <= 1e-12


def test_reweight_examples():
    h = Tensor(np.array([[[2.0, -2.0], [4.0, 8.0], [1.0, 1.0]]]))
    w = Tensor(np.array([[0.75, 0.25]]))
    out = reweight_states(h, w, np.array([[0, 1, 1]])).data[0]
    np.testing.assert_array_equal(out[0], [1.5, -1.5])
    np.testing.assert_array_equal(out[1], [1.0, 2.0])
    single = reweight_states(h, Tensor(np.array([[1.0]])), np.zeros((1, 3), int)).data
    np.testing.assert_array_equal(single, h.data)
    uniform = reweight_states(h, Tensor(np.array([[1 / 3, 1 / 3, 1 / 3]])),
                              np.array([[0, 1, 2]])).data
    np.testing.assert_allclose(uniform, h.data / 3, rtol=1e-15)


def test_reweight_is_linear():
    rng = np.random.default_rng(6)
    h = rng.normal(size=(2, 5, 3))
    w = Tensor(rng.dirichlet(np.ones(2), size=2))
    w2s = np.array([[0, 0, 1, 1, 1], [0, 1, 1, 1, 1]])
    a = reweight_states(Tensor(3.5 * h), w, w2s).data
    np.testing.assert_allclose(a, 3.5 * reweight_states(Tensor(h), w, w2s).data, rtol=1e-14)


def test_encoder_output_reweights_real_tokens_only():
    model = SWDModel(tiny_config())
    batch = make_batch([[[4, 5], [6]], [[7, 8, 9]]])
    enc = model.encoder_output(batch)
    w2s = batch.word2sen
    for b in range(batch.size):
        for i in range(batch.src.shape[1]):
            expect = enc.weights.data[b, w2s[b, i]] * enc.states.data[b, i]
            if not batch.src_mask[b, i]:
                expect = np.zeros_like(expect)
            np.testing.assert_allclose(enc.reweighted.data[b, i], expect, atol=1e-15)


def test_detached_weights_leave_states_unscaled():
    cfg = tiny_config(detach_weights=True)
    enc = SWDModel(cfg).encoder_output(make_batch([[[4, 5], [6]]]))
    assert enc.reweighted is enc.states
    assert enc.weights is not None


# -- attention -------------------------------------------------------------------


def attention_setup(seed=0, B=2, L=4):
    cfg = tiny_config()
    p = init_params(cfg)
    rng = np.random.default_rng(seed)
    hp = Tensor(rng.normal(size=(B, L, 6)), requires_grad=True)
    state = Tensor(rng.normal(size=(B, 6)), requires_grad=True)
    mask = np.ones((B, L), bool)
    mask[1, 2:] = False
    return p, hp, state, mask


def test_uniform_scores_average_real_states():
    p, hp, state, mask = attention_setup()
    p["att_v"] = Tensor(np.zeros((6, 1)))
    ctx, alpha = attention_context(state, hp, mask, p)
    np.testing.assert_allclose(ctx.data[0], hp.data[0].mean(axis=0), atol=1e-15)
    np.testing.assert_allclose(ctx.data[1], hp.data[1, :2].mean(axis=0), atol=1e-15)


def test_single_real_token_is_the_context():
    p, hp, state, mask = attention_setup(L=3)
    mask[:] = False
    mask[:, 0] = True
    ctx, alpha = attention_context(state, hp, mask, p)
    np.testing.assert_allclose(ctx.data, hp.data[:, 0], atol=1e-15)


def test_alpha_is_masked_distribution():
    p, hp, state, mask = attention_setup(1)
    _, alpha = attention_context(state, hp, mask, p)
    np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-15)
    assert (alpha.data[~mask] == 0).all()


def test_fused_attention_matches_composed():
    for seed in range(3):
        p, hp, state, mask = attention_setup(seed)
        keys = T.matmul(T.reshape(hp, (8, 6)), p["att_Wh"])
        keys = T.reshape(keys, (2, 4, 6))
        ctx, _ = attention_context(state, hp, mask, p, keys)
        fused = fused_attention_context(state, hp, keys, mask, p["att_Ws"], p["att_v"])
        np.testing.assert_allclose(fused.data, ctx.data, atol=1e-14)
        proj = np.random.default_rng(seed).normal(size=(2, 6))
        g_ref = T.backward(T.sum(T.mul(ctx, Tensor(proj))))
        g_fused = T.backward(T.sum(T.mul(fused, Tensor(proj))))
        for leaf in (hp, state, p["att_Ws"], p["att_v"], p["att_Wh"]):
            np.testing.assert_allclose(g_fused[leaf], g_ref[leaf], atol=1e-13)


def test_fused_lstm_cell_matches_composed():
    rng = np.random.default_rng(7)
    n = 3
    zx = Tensor(rng.normal(size=(2, 4 * n)), requires_grad=True)
    h = Tensor(rng.normal(size=(2, n)), requires_grad=True)
    c = Tensor(rng.normal(size=(2, n)), requires_grad=True)
    Wh = Tensor(rng.normal(size=(n, 4 * n)), requires_grad=True)
    h1, c1 = lstm_cell(zx, h, c, Wh)
    h2, c2 = fused_lstm_cell(zx, h, c, Wh)
    np.testing.assert_allclose(h2.data, h1.data, atol=1e-15)
    np.testing.assert_allclose(c2.data, c1.data, atol=1e-15)
    proj_h, proj_c = rng.normal(size=(2, n)), rng.normal(size=(2, n))

    def obj(hh, cc):
        return T.add(T.sum(T.mul(hh, Tensor(proj_h))), T.sum(T.mul(cc, Tensor(proj_c))))

    g1, g2 = T.backward(obj(h1, c1)), T.backward(obj(h2, c2))
    for leaf in (zx, h, c, Wh):
        np.testing.assert_allclose(g2[leaf], g1[leaf], atol=1e-14)


# -- decoder ----------------------------------------------------------------------


def test_decode_step_distribution():
    model = SWDModel(tiny_config())
    batch = make_batch([[[4, 5], [6]], [[7]]])
    enc = model.encoder_output(batch)
    st = model.initial_decoder_state(enc)
    probs, new = model.decode_step(np.array([BOS, BOS]), st, enc)
    assert probs.shape == (2, V)
    np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-12)
    assert (probs.data > 0).all()
    again, _ = model.decode_step(np.array([BOS, BOS]), st, enc)
    np.testing.assert_array_equal(probs.data, again.data)


def test_zero_params_decode_uniformly():
    cfg = tiny_config()
    model = SWDModel(cfg, zeroed(init_params(cfg)))
    enc = model.encoder_output(make_batch([[[4, 5]]]))
    probs, _ = model.decode_step(np.array([BOS]), model.initial_decoder_state(enc), enc)
    np.testing.assert_allclose(probs.data, 1.0 / V, atol=1e-15)


def test_decode_step_rejects_unknown_token():
    model = SWDModel(tiny_config())
    enc = model.encoder_output(make_batch([[[4, 5]]]))
    with pytest.raises(VocabularyError):
        model.decode_step(np.array([V + 3]), model.initial_decoder_state(enc), enc)


def test_greedy_boundaries_and_emission_rule():
    cfg = tiny_config()
    model = SWDModel(cfg)
    batch = make_batch(rand_docs(np.random.default_rng(8), 4))
    assert model.greedy_decode(batch, 0) == [[], [], [], []]
    for seq in model.greedy_decode(batch, 12):
        assert len(seq) <= 12
        assert PAD not in seq and BOS not in seq and EOS not in seq


def test_greedy_ties_go_to_lowest_id():
    cfg = tiny_config()
    model = SWDModel(cfg, zeroed(init_params(cfg)))
    out = model.greedy_decode(make_batch([[[4, 5]]]), 3)
    assert out == [[1, 1, 1]]


def test_summarize_matches_greedy_decode():
    model = SWDModel(tiny_config())
    docs = [Document([[4, 5], [6, 7, 8]]), Document([[9]])]
    batch = collate([Example(d, [EOS]) for d in docs])
    assert model.summarize(docs, 6) == model.greedy_decode(batch, 6)


# -- whole-model checks --------------------------------------------------------------


@pytest.mark.parametrize("attention", [True, False])
def test_fused_and_composed_models_agree(attention):
    cfg = tiny_config(attention=attention)
    rng = np.random.default_rng(9)
    batch = make_batch(rand_docs(rng, 3), [rng.integers(4, V, size=3).tolist() for _ in range(3)])
    fused, plain = SWDModel(cfg), SWDModel(cfg, fused=False)
    lf, lp = joint_loss(fused, batch, 0.3), joint_loss(plain, batch, 0.3)
    assert lf.loss.item() == pytest.approx(lp.loss.item(), rel=1e-13)
    gf, gp = T.backward(lf.loss), T.backward(lp.loss)
    for name in fused.params:
        np.testing.assert_allclose(gf[fused.params[name]], gp[plain.params[name]],
                                   rtol=1e-9, atol=1e-12)


def full_loss_check(cfg, batch, lam, names=None):
    model = SWDModel(cfg)
    worst = 0.0
    for name in names or model.params:
        def f(x, name=name):
            ps = dict(model.params)
            ps[name] = x
            return joint_loss(SWDModel(cfg, ps), batch, lam).loss
        worst = max(worst, T.grad_check(f, model.params[name].data))
    return worst


def test_end_to_end_gradient_on_toy_model():
    cfg = ModelConfig(vocab_size=10, embed_dim=4, hidden_dim=6, position_dim=3, mlp_hidden=5,
                      max_sentences=4)
    batch = make_batch([[[4, 5, 6], [7, 8]], [[9, 4]]], [[4, 5], [9, 9, 8]])
    batch.weights[0] = [0.7, 0.3]
    assert full_loss_check(cfg, batch, 0.5) <= 1e-4


def test_end_to_end_gradient_without_attention():
    cfg = ModelConfig(vocab_size=10, embed_dim=3, hidden_dim=4, position_dim=2, mlp_hidden=3,
                      max_sentences=3, attention=False)
    batch = make_batch([[[4, 5], [7]]], [[4, 7]])
    assert full_loss_check(cfg, batch, 1.0) <= 1e-4
