import itertools

import numpy as np
import pytest

from iloreg import encoder as E
from iloreg import tensor as T
from iloreg.ctc import ctc_prefix_score
from iloreg.decoding import (DecodeConfig, attention_beam_search, beam_search, ctc_greedy_decode,
                             decode_set, decode_utterance, decoder_score_fn,
                             hybrid_beam_search)
from iloreg.model import build_model
from iloreg.tensor import ConfigurationError, ContractError

from conftest import tiny_decoder, tiny_encoder

SOS, EOS = 1, 2


class TableScorer:
    """Attention stand-in: a fixed random next-token distribution per prefix."""

    def __init__(self, seed, V):
        self.rng = np.random.default_rng(seed)
        self.V = V
        self.table = {}

    def logp(self, prefix):
        if prefix not in self.table:
            x = self.rng.standard_normal(self.V) * 2
            self.table[prefix] = x - np.logaddexp.reduce(x)
        return self.table[prefix]

    def __call__(self, prefixes, parents, state):
        return np.array([self.logp(tuple(p)) for p in prefixes]), None


def random_lp(rng, T_, V):
    x = rng.standard_normal((T_, V)) * 2
    return x - np.logaddexp.reduce(x, axis=1, keepdims=True)


def exhaustive(scorer, lp, labels, maxlen, cfg):
    best = None
    for L in range(maxlen + 1):
        for seq in itertools.product(labels, repeat=L):
            toks = (SOS,) + seq + (EOS,)
            att = sum(scorer.logp(toks[:i])[toks[i]] for i in range(1, len(toks)))
            score = cfg.att_weight * att
            if cfg.ctc_weight > 0:
                score = cfg.ctc_weight * ctc_prefix_score(lp, list(seq) + [EOS], eos=EOS) + score
            key = (-score, len(toks), toks)
            if best is None or key < best[0]:
                best = (key, list(seq))
    return best[1], -best[0][0]


def test_hybrid_matches_exhaustive_oracle():
    labels = [3, 4, 5]
    cfg = DecodeConfig(beam_size=10)
    for trial in range(150):
        rng = np.random.default_rng(trial)
        T_ = int(rng.integers(1, 3))
        lp = random_lp(rng, T_, 6)
        scorer = TableScorer(trial + 1000, 6)
        hyp = hybrid_beam_search(scorer, lp, labels, T_, cfg)
        seq, score = exhaustive(scorer, lp, labels, T_, cfg)
        assert hyp.labels == seq
        assert hyp.combined_score == score


def test_attention_only_matches_exhaustive_and_degenerate_weights():
    labels = [3, 4, 5]
    for trial in range(40):
        rng = np.random.default_rng(trial)
        lp = random_lp(rng, 2, 6)
        scorer = TableScorer(trial, 6)
        att = attention_beam_search(scorer, labels, 2, DecodeConfig(beam_size=10))
        hyb = hybrid_beam_search(scorer, lp, labels, 2, DecodeConfig(ctc_weight=0.0, att_weight=1.0))
        assert att.labels == hyb.labels == exhaustive(scorer, lp, labels, 2, DecodeConfig("attention", 10, 0.0, 1.0))[0]


def test_beam_one_is_greedy_rollout():
    labels = [3, 4, 5, 6]
    for trial in range(30):
        scorer = TableScorer(trial, 7)
        prefix = (SOS,)
        while len(prefix) - 1 < 4:
            nxt = int(np.argmax([scorer.logp(prefix)[t] for t in labels + [EOS]]))
            tok = (labels + [EOS])[nxt]
            if tok == EOS:
                break
            prefix += (tok,)
        hyp = attention_beam_search(scorer, labels, 4, DecodeConfig(beam_size=1))
        assert hyp.labels == list(prefix[1:])


def test_score_nondecreasing_in_beam_on_toy_suite(toy_model):
    model, corpus = toy_model
    labels = list(model.vocab.labels)
    with T.no_grad():
        for u in corpus.test:
            out = model.encode(T.Tensor(u.features), training=False)
            Tp = int(out.lengths[0])
            lp = model.ctc_log_probs(out.final_memory).data[0]
            fn = decoder_score_fn(model, out.final_memory, Tp)
            scores = [hybrid_beam_search(fn, lp, labels, Tp, DecodeConfig(beam_size=b)).combined_score
                      for b in range(1, 11)]
            assert all(b >= a for a, b in zip(scores, scores[1:])), u.uid


@pytest.mark.parametrize("frames,expect", [
    ([3, 3, 0, 4], [3, 4]),
    ([0, 0, 0], []),
    ([3, 0, 3], [3, 3]),
])
def test_ctc_greedy_examples(frames, expect):
    lp = np.full((len(frames), 5), -5.0)
    lp[np.arange(len(frames)), frames] = 0.0
    assert ctc_greedy_decode(lp) == expect


def test_errors():
    scorer = TableScorer(0, 6)
    with pytest.raises(ContractError):
        hybrid_beam_search(scorer, np.zeros((0, 6)), [3], 1, DecodeConfig())
    with pytest.raises(ContractError):
        beam_search(scorer, [3], 1, DecodeConfig())
    with pytest.raises(ConfigurationError):
        DecodeConfig(ctc_weight=0.5, att_weight=0.6).validate()
    with pytest.raises(ConfigurationError):
        DecodeConfig(mode="greedy").validate()


@pytest.fixture(scope="module")
def trained_pair(tiny_corpus):
    from iloreg.training import Trainer, TrainConfig
    model = build_model(tiny_encoder(ilo_layer=1), tiny_decoder(), "proposed")
    Trainer(model, tiny_corpus, TrainConfig(regime="proposed", epochs=3, batch_size=8, warmup_steps=10)).fit()
    base = build_model(tiny_encoder(), tiny_decoder(), "baseline", seed=9)
    base.load_state_dict(model.state_dict())
    return model, base


@pytest.mark.parametrize("mode", ["ctc", "attention", "hybrid"])
def test_decode_never_reads_intermediate_memory(trained_pair, tiny_corpus, mode):
    proposed, base = trained_pair
    E.reset_ilo_access_count()
    a = decode_set(proposed, tiny_corpus.test, DecodeConfig(mode=mode))
    assert E.ilo_access_count == 0
    b = decode_set(base, tiny_corpus.test, DecodeConfig(mode=mode))
    assert a == b


def test_parallel_decode_keeps_order(trained_pair, tiny_corpus):
    model, _ = trained_pair
    cfg = DecodeConfig(beam_size=3)
    assert decode_set(model, tiny_corpus.test, cfg, jobs=3) == decode_set(model, tiny_corpus.test, cfg)


def test_decode_utterance_outputs_labels(trained_pair, tiny_corpus):
    model, _ = trained_pair
    u = tiny_corpus.test[0]
    for mode in ("ctc", "attention", "hybrid"):
        hyp = decode_utterance(model, u.features, DecodeConfig(mode=mode))
        assert all(3 <= t < 8 for t in hyp)
        assert len(hyp) <= u.num_frames // 4 or mode == "ctc"


def test_noise_free_corpus_is_decodable():
    from iloreg.corpus import ToyCorpusSpec, corpus_wer, generate_corpus
    from iloreg.decoder import DecoderConfig
    from iloreg.encoder import EncoderConfig
    from iloreg.training import Trainer, TrainConfig

    corpus = generate_corpus(ToyCorpusSpec(noise_std=0.0, num_train=200))
    refs = [u.labels for u in corpus.test]
    wers = []
    for seed in range(3):
        model = build_model(EncoderConfig(num_layers=4), DecoderConfig(), "baseline", seed)
        Trainer(model, corpus, TrainConfig(epochs=60, seed=seed, warmup_steps=100)).fit()
        wers.append(corpus_wer(refs, decode_set(model, corpus.test, DecodeConfig())))
        if wers[-1] == 0.0:
            break
    assert min(wers) == 0.0, wers
