import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from iloreg import tensor as T
from iloreg.tensor import ConfigurationError, ContractError, DimensionError, Tape, Tensor, backward

from conftest import numeric_grad, rel_err


def grad_check(build, *shapes, seed=0, tol=1e-5):
    """Compare tape gradients of ``build(*tensors)`` with central differences."""
    rng = np.random.default_rng(seed)
    arrs = [rng.standard_normal(s) for s in shapes]
    weights = None

    def scalar(*ts):
        nonlocal weights
        out = build(*ts)
        if weights is None:
            weights = np.random.default_rng(seed + 1).standard_normal(out.shape)
        return (out * Tensor(weights, dtype=np.float64)).sum()

    ts = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrs]
    with Tape():
        backward(scalar(*ts))
    for t, a in zip(ts, arrs):
        num = numeric_grad(lambda: float(scalar(*[Tensor(x, dtype=np.float64) for x in arrs]).data), a)
        assert rel_err(t.grad, num) < tol or np.max(np.abs(t.grad - num)) < 1e-8


def test_matmul_examples():
    eye = T.tensor(np.eye(2))
    np.testing.assert_array_equal(T.matmul(eye, eye).data, np.eye(2))
    out = T.matmul(T.tensor([[1.0, 2.0], [3.0, 4.0]]), T.tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(T.tensor(np.ones((2, 3))), T.tensor(np.ones((2, 3))))


def test_matmul_gradient():
    grad_check(T.matmul, (3, 4), (4, 2))


def test_batched_matmul_gradient():
    grad_check(T.matmul, (2, 3, 4), (2, 4, 5))


@pytest.mark.parametrize("x,expect", [
    ([0.0, 0.0], [0.5, 0.5]),
    ([1000.0, 1000.0], [0.5, 0.5]),
    ([0.0, math.log(3.0)], [0.25, 0.75]),
])
def test_softmax_examples(x, expect):
    np.testing.assert_allclose(T.softmax(T.tensor(x, dtype=np.float64)).data, expect, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-1e4, 1e4)))
def test_softmax_sums_to_one(x):
    s = T.softmax(T.tensor(x, dtype=np.float64), axis=-1).data
    assert np.all(np.isfinite(s))
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_and_log_softmax_gradients():
    grad_check(lambda x: T.softmax(x, axis=-1), (3, 5))
    grad_check(lambda x: T.log_softmax(x, axis=0), (4, 3))


def test_layer_norm_examples():
    g, b = T.tensor(np.ones(3)), T.tensor(np.zeros(3))
    np.testing.assert_allclose(T.layer_norm(T.tensor([5.0, 5.0, 5.0]), g, b).data, 0.0, atol=1e-12)
    g, b = T.tensor(np.ones(2), dtype=np.float64), T.tensor(np.zeros(2), dtype=np.float64)
    out = T.layer_norm(T.tensor([1.0, -1.0], dtype=np.float64), g, b, eps=1e-12)
    np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-9)


def test_layer_norm_gradient():
    grad_check(lambda x, g, b: T.layer_norm(x, g, b), (3, 5), (5,), (5,))


def test_depthwise_conv_examples():
    x = T.tensor([[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(T.depthwise_conv1d(x, T.tensor(np.ones((3, 1)))).data, [[3.0], [6.0], [5.0]])
    rng = np.random.default_rng(0)
    y = rng.standard_normal((7, 4)).astype(np.float32)
    delta = np.zeros((5, 4), dtype=np.float32)
    delta[2] = 1.0
    np.testing.assert_array_equal(T.depthwise_conv1d(T.tensor(y), T.tensor(delta)).data, y)


def test_depthwise_conv_even_kernel_rejected():
    with pytest.raises(ConfigurationError):
        T.depthwise_conv1d(T.tensor(np.ones((4, 2))), T.tensor(np.ones((2, 2))))


def test_depthwise_conv_gradient():
    grad_check(T.depthwise_conv1d, (2, 6, 3), (3, 3))


@pytest.mark.parametrize("fn", [T.sigmoid, T.swish, T.relu, T.glu, lambda x: x.exp(),
                                lambda x: (x * x + 1.0).log(), lambda x: x.sum(axis=1),
                                lambda x: x.mean(axis=0), lambda x: x.transpose(1, 0),
                                lambda x: x.reshape(2, -1) / 3.0, lambda x: x[1:, ::2]])
def test_elementwise_and_shape_gradients(fn):
    grad_check(fn, (3, 4), seed=3)


def test_embedding_and_concat_gradients():
    ids = np.array([[0, 2, 2], [1, 0, 3]])
    grad_check(lambda t: T.embedding(t, ids), (4, 3))
    grad_check(lambda a, b: T.concat([a, b], axis=1), (2, 3), (2, 2))


def test_backward_square():
    x = Tensor(np.array(3.0), requires_grad=True)
    with Tape():
        backward(x * x)
    assert x.grad == pytest.approx(6.0)


def test_unused_input_gets_zero_grad():
    x = Tensor(np.array(2.0), requires_grad=True)
    y = Tensor(np.array(5.0), requires_grad=True)
    with Tape():
        backward(x * 1.0)
    assert x.grad == pytest.approx(1.0)
    assert y.grad == 0.0


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape(), pytest.raises(ContractError):
        backward(x * 2.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        with T.no_grad():
            (x * 2.0).sum()
        assert len(tape) == 0
        x.sum()
        assert len(tape) == 1


def test_dropout_seeded_and_inverted():
    x = T.tensor(np.ones((50, 40)))
    with Tape(7):
        a = T.dropout(x, 0.25, training=True).data
    with Tape(7):
        b = T.dropout(x, 0.25, training=True).data
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, np.float32(1 / 0.75)}
    assert T.dropout(x, 0.25, training=False) is x
    with pytest.raises(ContractError):
        T.dropout(x, 0.5, training=True)


def test_tape_is_per_thread():
    seen = {}

    def worker():
        seen["tape"] = T.current_tape()

    with Tape():
        th = threading.Thread(target=worker)
        th.start()
        th.join()
    assert seen["tape"] is None


def test_default_dtype_switch(float64):
    assert T.tensor([1.0]).dtype == np.float64
    with pytest.raises(ConfigurationError):
        T.set_default_dtype(np.int32)
