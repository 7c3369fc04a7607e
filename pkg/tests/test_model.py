import numpy as np
import pytest

from iloreg import tensor as T
from iloreg.losses import LossWeights, att_ce_loss
from iloreg.model import build_model, make_batch
from iloreg.tensor import ConfigurationError, Tape, Tensor, backward

from conftest import rel_err, tiny_decoder, tiny_encoder


def models(seed=0, dtype=None, **enc):
    e = tiny_encoder(ilo_layer=1, **enc)
    d = tiny_decoder()
    return {r: build_model(e, d, r, seed, dtype=dtype) for r in ("baseline", "proposed", "ilo_ctc")}


def grads_of(model, fn):
    model.zero_grad()
    with Tape(0):
        backward(fn())
    return {k: p.grad.copy() for k, p in model.named_parameters().items()}


def test_parameter_ledger():
    m = models()
    d, V = 8, 8
    assert m["proposed"].num_parameters() == m["baseline"].num_parameters()
    assert m["ilo_ctc"].num_parameters() - m["baseline"].num_parameters() == d * V + V
    coarse = build_model(tiny_encoder(ilo_layer=1), tiny_decoder(), "ilo_ctc", inter_units="coarse")
    Vc = coarse.inter_vocab.size
    assert coarse.num_parameters() - m["baseline"].num_parameters() == d * Vc + Vc


def test_same_seed_shares_parameters_across_regimes():
    m = models()
    base = m["baseline"].state_dict()
    for r in ("proposed", "ilo_ctc"):
        other = m[r].state_dict()
        for k, v in base.items():
            assert np.array_equal(v, other[k]), k


def test_regime_requires_tap():
    with pytest.raises(ConfigurationError):
        build_model(tiny_encoder(), tiny_decoder(), "proposed")
    with pytest.raises(ConfigurationError):
        build_model(tiny_encoder(d_model=16), tiny_decoder(), "baseline")


def test_make_batch_targets(tiny_corpus):
    b = make_batch(tiny_corpus.train[:3])
    for i, u in enumerate(tiny_corpus.train[:3]):
        L = len(u.labels)
        assert list(b.ys_in[i, : L + 1]) == [1] + u.labels
        assert list(b.ys_out[i, : L + 1]) == u.labels + [2]
        assert b.ys_lengths[i] == L + 1


def test_decoder_gradient_is_weighted_sum_of_both_passes(tiny_corpus, float64):
    model = models(dtype=np.float64)["proposed"]
    batch = make_batch(tiny_corpus.train[:2], np.float64)
    w = LossWeights.from_alpha_gamma(0.3, 0.2)

    def att(which):
        out = model.encode(Tensor(batch.feats), batch.lengths)
        mem = out.final_memory if which == "final" else out.ilo_memory
        logits = model.decoder_logits(mem, out.lengths, batch.ys_in)
        return att_ce_loss(logits, batch.ys_out, 0.1, batch.ys_lengths)

    total = grads_of(model, lambda: model.loss(batch, w, training=False)[0])
    g_final = grads_of(model, lambda: att("final"))
    g_inter = grads_of(model, lambda: att("inter"))
    for k in total:
        if k.startswith("decoder."):
            expect = w.beta * g_final[k] + w.gamma * g_inter[k]
            assert rel_err(total[k], expect) < 1e-6 or np.max(np.abs(total[k] - expect)) < 1e-12, k
    assert any(np.abs(g_inter[k]).sum() > 0 for k in g_inter if k.startswith("decoder."))


def test_ilo_ctc_decoder_sees_only_primary_pass(tiny_corpus, float64):
    m = models(dtype=np.float64)
    batch = make_batch(tiny_corpus.train[:2], np.float64)
    base = grads_of(m["baseline"], lambda: m["baseline"].loss(batch, LossWeights(0.3, 0.55, 0.15),
                                                              training=False)[0])
    ilo = grads_of(m["ilo_ctc"], lambda: m["ilo_ctc"].loss(batch, LossWeights(0.3, 0.55, 0.15),
                                                          training=False)[0])
    prop = grads_of(m["proposed"], lambda: m["proposed"].loss(batch, LossWeights(0.3, 0.55, 0.15),
                                                              training=False)[0])
    for k in base:
        if k.startswith("decoder."):
            # baseline weighs att by 1 - alpha = 0.7; ilo_ctc by beta = 0.55
            np.testing.assert_allclose(ilo[k], base[k] * (0.55 / 0.7), rtol=1e-9, atol=1e-14)
    diff = sum(np.abs(prop[k] - ilo[k]).sum() for k in base if k.startswith("decoder."))
    assert diff > 0


def test_intermediate_path_alone_trains_lower_layers_only(tiny_corpus, float64):
    model = models(dtype=np.float64, num_layers=3)["proposed"]
    batch = make_batch(tiny_corpus.train[:2], np.float64)
    w = LossWeights(0.0, 0.0, 1.0)
    g = grads_of(model, lambda: model.loss(batch, w, training=False)[0])
    assert all(np.abs(v).sum() == 0 for k, v in g.items() if k.startswith(("encoder.layers.2.",
                                                                          "encoder.layers.3.")))
    assert np.abs(g["encoder.layers.1.conv.dw"]).sum() > 0
    assert np.abs(g["encoder.frontend.w"]).sum() > 0


def test_state_dict_roundtrip():
    m = models()
    a, b = m["baseline"], build_model(tiny_encoder(), tiny_decoder(), "baseline", seed=5)
    b.load_state_dict(a.state_dict())
    for k, v in a.state_dict().items():
        assert np.array_equal(v, b.state_dict()[k])
    with pytest.raises(KeyError):
        m["ilo_ctc"].load_state_dict(a.state_dict())
    m["ilo_ctc"].load_state_dict(a.state_dict(), strict=False)
