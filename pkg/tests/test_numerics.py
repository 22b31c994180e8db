import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from attnagree import numerics as nx
from attnagree.errors import ContractError, DimensionError, DomainError, NumericError
from attnagree.numerics import Tensor


def triple_loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


# ---------------------------------------------------------------- forward values


def test_matmul_small_cases():
    eye = Tensor([[1.0, 0.0], [0.0, 1.0]])
    assert np.array_equal((eye @ Tensor([[3.0], [4.0]])).data, [[3.0], [4.0]])
    assert (Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])).data[0, 0] == 11.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**31))
def test_matmul_matches_triple_loop(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
    got = (Tensor(a) @ Tensor(b)).data
    ref = triple_loop_matmul(a, b)
    scale = np.abs(a) @ np.abs(b) + 1e-300
    assert np.max(np.abs(got - ref) / scale) < 1e-12


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_softmax_examples():
    assert np.allclose(nx.softmax(Tensor([0.0, 0.0, 0.0])).data, 1 / 3, atol=1e-15)
    big = nx.softmax(Tensor([1000.0, 0.0, 0.0])).data
    assert np.all(np.isfinite(big)) and abs(big[0] - 1.0) < 1e-12
    x = np.array([0.5, 0.3, 0.2])
    direct = np.exp(x) / np.exp(x).sum()
    assert np.max(np.abs(nx.softmax(Tensor(x)).data - direct)) < 1e-12


def test_softmax_empty_axis_is_dimension_error():
    with pytest.raises(DimensionError):
        nx.softmax(Tensor(np.zeros((2, 0))), axis=-1)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-1e3, 1e3)))
def test_softmax_slices_sum_to_one(x):
    p = nx.softmax(Tensor(x), axis=-1).data
    assert np.all(p >= 0)
    assert np.max(np.abs(p.sum(axis=-1) - 1.0)) < 1e-9


def test_elementwise_examples():
    assert nx.leaky_relu(Tensor(-1.0)).item() == -0.01
    assert nx.leaky_relu(Tensor(2.0)).item() == 2.0
    assert nx.sigmoid(Tensor(0.0)).item() == 0.5
    assert nx.tanh(Tensor(0.0)).item() == 0.0
    assert nx.exp(Tensor(0.0)).item() == 1.0
    assert nx.log(Tensor(math.e)).item() == pytest.approx(1.0, abs=1e-15)


def test_sigmoid_matches_logistic_formula():
    z = np.linspace(-30, 30, 301)
    assert np.max(np.abs(nx.sigmoid(Tensor(z)).data - 1 / (1 + np.exp(-z)))) < 1e-15


def test_log_of_nonpositive_is_domain_error():
    with pytest.raises(DomainError):
        nx.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        nx.log(Tensor([-2.0]))


def test_non_finite_result_is_numeric_error():
    with pytest.raises(NumericError):
        nx.exp(Tensor([800.0]))


def test_cross_entropy_examples():
    assert nx.cross_entropy_with_logits(Tensor(np.zeros(4)), 0).item() == pytest.approx(
        math.log(4), abs=1e-15)
    assert nx.cross_entropy_with_logits(Tensor([10.0, 0, 0, 0]), 0).item() < 1e-3
    direct = -math.log(math.exp(3) / (math.exp(1) + math.exp(2) + math.exp(3)))
    got = nx.cross_entropy_with_logits(Tensor([1.0, 2.0, 3.0]), 2).item()
    assert abs(got - direct) < 1e-12


def test_cross_entropy_gold_out_of_range():
    with pytest.raises(IndexError):
        nx.cross_entropy_with_logits(Tensor(np.zeros(4)), 4)
    with pytest.raises(IndexError):
        nx.cross_entropy_with_logits(Tensor(np.zeros(4)), -1)


def test_layer_norm_against_formula():
    rng = np.random.default_rng(3)
    x, g, b = rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=5)
    mu = x.mean(-1, keepdims=True)
    ref = (x - mu) / np.sqrt(x.var(-1, keepdims=True) + 1e-5) * g + b
    assert np.max(np.abs(nx.layer_norm(Tensor(x), g, b).data - ref)) < 1e-12


# ---------------------------------------------------------------- reverse pass


def test_backward_examples():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    nx.backward(x.sum())
    assert np.array_equal(x.grad, np.ones((2, 3)))
    y = Tensor(3.0, requires_grad=True)
    nx.backward(y * y)
    assert y.grad == 6.0


def test_backward_needs_scalar_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        nx.backward(x * 2.0)


def test_backward_resets_accumulators_between_calls():
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    loss = nx.tsum(nx.tanh(x) * x)
    nx.backward(loss)
    first = x.grad.copy()
    nx.backward(loss)
    assert np.array_equal(first, x.grad)


def test_backward_is_bit_deterministic():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(4, 5))
    w = rng.normal(size=(5, 3))

    def run():
        x = Tensor(a, requires_grad=True)
        W = Tensor(w, requires_grad=True)
        h = nx.leaky_relu(x @ W)
        loss = nx.tsum(nx.log_softmax(h, axis=-1) * h) + nx.tsum(nx.stack([h, h * h]))
        nx.backward(loss)
        return x.grad.copy(), W.grad.copy()

    g1, g2 = run(), run()
    assert all(np.array_equal(p, q) for p, q in zip(g1, g2))


def test_shared_subexpression_accumulates():
    x = Tensor(2.0, requires_grad=True)
    y = x * x
    nx.backward(y * y + y)     # x^4 + x^2
    assert x.grad == pytest.approx(4 * 8 + 4, abs=1e-12)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with nx.no_grad():
        y = x * 3.0
    assert not y.requires_grad and y.parents == ()


def test_advanced_getitem_accumulates_repeats():
    x = Tensor(np.arange(3.0), requires_grad=True)
    nx.backward(nx.tsum(x[[0, 0, 2]]))
    assert np.array_equal(x.grad, [2.0, 0.0, 1.0])


def test_broadcast_gradient_is_reduced():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.arange(4.0), requires_grad=True)
    nx.backward(nx.tsum(a * b))
    assert np.array_equal(b.grad, [3.0, 3.0, 3.0, 3.0])
    assert np.array_equal(a.grad, np.tile(np.arange(4.0), (3, 1)))


# ---------------------------------------------------------------- checker


def test_finite_diff_check_on_linear_function_is_exact():
    assert nx.finite_diff_check(lambda t: nx.tsum(t), np.zeros((3, 4))) < 1e-12
    # away from zero the sum itself rounds by ulp(sum), which over 2h is ~1e-11
    for seed in range(5):
        x = np.random.default_rng(seed).normal(size=(3, 4))
        assert nx.finite_diff_check(lambda t: nx.tsum(t), x) < 1e-10


def test_finite_diff_check_detects_a_wrong_gradient():
    def bad_square(t):
        return nx.record(t.data ** 2, (t,), lambda g: (g * t.data,), "bad_square")

    x = np.array([0.7, -1.3])
    assert nx.finite_diff_check(lambda t: nx.tsum(bad_square(t)), x) > 0.1


def test_op_suite_passes_everywhere():
    from attnagree.gradcheck import op_suite

    results = op_suite(points=3, seed=5)
    bad = [(r.name, r.worst) for r in results if not r.passed]
    assert not bad, bad


def test_array_on_the_left_defers_to_tensor():
    x = Tensor(np.ones(3), requires_grad=True)
    y = np.arange(3.0) + x * np.arange(3.0)
    assert isinstance(y, Tensor) and y.data.tolist() == [0.0, 2.0, 4.0]
    nx.backward(nx.tsum(y))
    assert np.array_equal(x.grad, np.arange(3.0))
