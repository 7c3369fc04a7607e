import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from iloreg import tensor as T
from iloreg.losses import (LossWeights, att_ce_loss, combined_loss, loss_baseline, loss_ilo_ctc,
                           loss_proposed)
from iloreg.tensor import ConfigurationError, ContractError, Tensor

from conftest import numeric_grad, rel_err


def test_baseline_examples():
    assert loss_baseline(2.0, 1.0, 0.3) == pytest.approx(1.3)
    assert loss_baseline(2.0, 1.0, 0.0) == 1.0
    assert loss_baseline(2.0, 1.0, 1.0) == 2.0
    with pytest.raises(ConfigurationError):
        loss_baseline(2.0, 1.0, 1.5)


def test_proposed_example():
    assert loss_proposed(2.0, 1.0, 1.5, LossWeights(0.3, 0.5, 0.2)) == pytest.approx(1.4)


def test_ilo_ctc_example():
    assert loss_ilo_ctc(2.0, 1.0, 1.8, LossWeights(0.3, 0.55, 0.15)) == pytest.approx(1.42)


def test_beta_is_the_simplex_remainder():
    assert LossWeights.from_alpha_gamma(0.3, 0.2).beta == pytest.approx(0.5)
    with pytest.raises(ConfigurationError):
        LossWeights(0.3, 0.6, 0.2)
    with pytest.raises(ConfigurationError):
        LossWeights(0.5, 0.7, -0.2)


@given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 50))
def test_gamma_zero_is_bitwise_baseline(l_ctc, l_att, extra):
    w = LossWeights.from_alpha_gamma(0.3, 0.0)
    base = loss_baseline(l_ctc, l_att, 0.3)
    assert loss_proposed(l_ctc, l_att, extra, w) == base
    assert loss_ilo_ctc(l_ctc, l_att, extra, w) == base


def test_gamma_zero_bitwise_on_tensors():
    a, b, c = (Tensor(np.array(v, dtype=np.float32)) for v in (1.2345678, 0.87654321, 3.3))
    w = LossWeights.from_alpha_gamma(0.3, 0.0)
    assert combined_loss("proposed", w, a, b, c).data.tobytes() == loss_baseline(a, b, 0.3).data.tobytes()


def test_att_ce_perfect_and_uniform():
    V = 6
    targets = np.array([1, 4, 2])
    perfect = np.full((3, V), -50.0)
    perfect[np.arange(3), targets] = 50.0
    assert float(att_ce_loss(Tensor(perfect, dtype=np.float64), targets, 0.0).data) < 1e-12
    uniform = Tensor(np.zeros((3, V)), dtype=np.float64)
    assert float(att_ce_loss(uniform, targets, 0.0).data) == pytest.approx(math.log(V))
    assert float(att_ce_loss(uniform, targets, 0.1).data) == pytest.approx(math.log(V))


def test_att_ce_masks_padding():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((2, 4, 5))
    targets = np.array([[1, 2, 3, 4], [2, 3, 0, 0]])
    full = att_ce_loss(Tensor(logits, dtype=np.float64), targets, 0.1, lengths=[4, 2])
    manual = [att_ce_loss(Tensor(logits[0], dtype=np.float64), targets[0], 0.1),
              att_ce_loss(Tensor(logits[1, :2], dtype=np.float64), targets[1, :2], 0.1)]
    expect = (4 * float(manual[0].data) + 2 * float(manual[1].data)) / 6
    assert float(full.data) == pytest.approx(expect)


def test_att_ce_gradient():
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((3, 5))
    targets = np.array([0, 3, 1])
    x = Tensor(logits.copy(), requires_grad=True, dtype=np.float64)
    with T.Tape():
        T.backward(att_ce_loss(x, targets, 0.1))
    num = numeric_grad(lambda: float(att_ce_loss(Tensor(logits, dtype=np.float64), targets, 0.1).data), logits)
    assert rel_err(x.grad, num) < 1e-6


def test_att_ce_errors():
    with pytest.raises(ContractError):
        att_ce_loss(Tensor(np.zeros((3, 5))), np.array([1, 2]))
    with pytest.raises(ConfigurationError):
        att_ce_loss(Tensor(np.zeros((2, 5))), np.array([1, 2]), smoothing=1.0)
