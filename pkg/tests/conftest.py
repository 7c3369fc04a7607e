import numpy as np
import pytest

from iloreg import tensor as T
from iloreg.corpus import ToyCorpusSpec, generate_corpus
from iloreg.decoder import DecoderConfig
from iloreg.encoder import EncoderConfig


def numeric_grad(f, arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``arr`` (mutated in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        hi = f()
        arr[i] = old - eps
        lo = f()
        arr[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / (np.abs(b) + 1e-8)))


@pytest.fixture
def float64():
    old = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(old)


def tiny_encoder(**kw) -> EncoderConfig:
    base = dict(num_layers=2, d_model=8, num_heads=2, ffn_dim=16, conv_kernel=3, dropout_p=0.0,
                feat_dim=6, subsample_factor=4)
    base.update(kw)
    return EncoderConfig(**base)


def tiny_decoder(**kw) -> DecoderConfig:
    base = dict(num_layers=1, d_model=8, num_heads=2, ffn_dim=16, dropout_p=0.0, vocab_size=8)
    base.update(kw)
    return DecoderConfig(**base)


def tiny_spec(**kw) -> ToyCorpusSpec:
    base = dict(vocab_size=5, feat_dim=6, num_train=24, num_dev=6, num_test=5, min_len=2, max_len=4)
    base.update(kw)
    return ToyCorpusSpec(**base)


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_corpus(tiny_spec())


@pytest.fixture(scope="session")
def toy_model():
    """A proposed-regime model trained to ~0.97 dev accuracy on the default corpus."""
    from iloreg.model import build_model
    from iloreg.training import Trainer, TrainConfig
    corpus = generate_corpus(ToyCorpusSpec())
    model = build_model(EncoderConfig(num_layers=4, ilo_layer=3), DecoderConfig(), "proposed", seed=0)
    Trainer(model, corpus, TrainConfig(regime="proposed", epochs=15)).fit()
    return model, corpus
