import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluctrend.tensor import (
    Parameter,
    Tensor,
    avg_pool1d_replicate,
    backward,
    concat,
    conv1d_strided,
    div,
    exp,
    finite_difference_gradcheck,
    matmul,
    maximum,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    tmean,
    transpose,
    tsum,
)


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, b).data, b.data)


def test_matmul_projector():
    p = Tensor([[1.0, 0.0], [0.0, 0.0]])
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(matmul(p, b).data, [[5.0, 6.0], [0.0, 0.0]])


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    expected = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    got = matmul(Tensor(a), Tensor(b)).data
    assert np.abs(got - expected).max() < 1e-12


def test_matmul_shape_mismatch_names_shapes():
    with pytest.raises(ValueError, match=r"\(3, 4\).*\(3, 2\)"):
        matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))


def test_softmax_uniform():
    y = softmax(Tensor([0.0, 0.0, 0.0])).data
    assert np.allclose(y, 1.0 / 3.0, atol=1e-15)


def test_softmax_exp_ratios():
    y = softmax(Tensor(np.log([1.0, 2.0, 3.0]))).data
    assert np.abs(y - np.array([1, 2, 3]) / 6.0).max() < 1e-12


def test_softmax_no_overflow():
    y = softmax(Tensor([1000.0, 1001.0])).data
    e = np.e
    assert np.abs(y - [1 / (1 + e), e / (1 + e)]).max() < 1e-12


def test_softmax_shift_invariance_and_row_sums():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 7))
    a = softmax(Tensor(x), axis=-1).data
    b = softmax(Tensor(x + 3.7), axis=-1).data
    assert np.abs(a - b).max() < 1e-9
    assert np.abs(a.sum(axis=-1) - 1.0).max() < 1e-9


def test_avg_pool_constant_fixed_point():
    x = np.full((6, 3), 2.5)
    for k in (1, 3, 5):
        assert np.array_equal(avg_pool1d_replicate(Tensor(x), k).data, x)


def test_avg_pool_hand_case():
    x = Tensor(np.array([[1.0], [2.0], [3.0], [4.0]]))
    got = avg_pool1d_replicate(x, 3).data[:, 0]
    assert np.abs(got - [4 / 3, 2.0, 3.0, 11 / 3]).max() < 1e-15


def test_avg_pool_k1_identity():
    x = np.random.default_rng(2).standard_normal((5, 4))
    assert np.array_equal(avg_pool1d_replicate(Tensor(x), 1).data, x)


def test_avg_pool_even_k_rejected():
    with pytest.raises(ValueError, match="odd"):
        avg_pool1d_replicate(Tensor(np.zeros((4, 2))), 2)


def test_conv1d_averaging_kernel():
    x = Tensor(np.array([[1.0], [2.0], [3.0], [4.0]]))
    w = Tensor(np.full((2, 1), 0.5))
    got = conv1d_strided(x, w, 2).data[:, 0]
    assert np.abs(got - [1.5, 3.5]).max() < 1e-15


def test_conv1d_stride1_pointwise():
    rng = np.random.default_rng(3)
    x, w = rng.standard_normal((5, 3)), rng.standard_normal((3, 4))
    got = conv1d_strided(Tensor(x), Tensor(w), 1).data
    assert np.abs(got - x @ w).max() < 1e-12


def test_conv1d_against_window_loop():
    rng = np.random.default_rng(4)
    length, m, k_c, d_out = 6, 3, 2, 4
    x, w = rng.standard_normal((length, m)), rng.standard_normal((k_c * m, d_out))
    got = conv1d_strided(Tensor(x), Tensor(w), k_c).data
    expected = np.zeros((length // k_c, d_out))
    for t in range(length // k_c):
        window = x[t * k_c : (t + 1) * k_c].reshape(-1)
        expected[t] = window @ w
    assert np.abs(got - expected).max() < 1e-12


def test_conv1d_length_error_mentions_kernel():
    with pytest.raises(ValueError, match="multiple of 3"):
        conv1d_strided(Tensor(np.zeros((5, 2))), Tensor(np.zeros((6, 4))), 3)


def test_backward_sum_gives_ones():
    p = Parameter(np.random.default_rng(5).standard_normal((3, 4)), "p")
    backward(tsum(p))
    assert np.array_equal(p.grad, np.ones((3, 4)))


def test_backward_quadratic():
    data = np.random.default_rng(6).standard_normal(7)
    p = Parameter(data, "p")
    backward(tsum(p * p))
    assert np.abs(p.grad - 2 * data).max() < 1e-14


def test_backward_requires_scalar():
    p = Parameter(np.ones(3), "p")
    with pytest.raises(ValueError, match="scalar"):
        backward(p * p)


def test_backward_double_use_accumulates():
    # loss = sum(p * p + 3 * p): d/dp = 2p + 3
    data = np.array([1.0, -2.0, 0.5])
    p = Parameter(data, "p")
    backward(tsum(p * p + 3.0 * p))
    assert np.abs(p.grad - (2 * data + 3.0)).max() < 1e-14


def test_unreachable_parameter_untouched():
    p = Parameter(np.ones(2), "used")
    q = Parameter(np.ones(2), "unused")
    backward(tsum(p * 2.0))
    assert np.array_equal(q.grad, np.zeros(2))
    assert np.array_equal(p.grad, np.full(2, 2.0))


def test_gradcheck_square():
    p = Parameter(np.array(3.0), "x")
    err = finite_difference_gradcheck(lambda: p * p, [p], n_samples=1)
    assert err < 1e-8


@pytest.mark.parametrize(
    "op",
    [
        lambda a, b: a + b,
        lambda a, b: a - b,
        lambda a, b: a * b,
        lambda a, b: div(a, b + 5.0),
        lambda a, b: exp(a * 0.3) + b,
        lambda a, b: sigmoid(a) * b,
        lambda a, b: relu(a) + relu(b),
        lambda a, b: maximum(a, b),
        lambda a, b: sqrt(a * a + b * b + 1.0),
        lambda a, b: matmul(a, transpose(b, (1, 0))),
        lambda a, b: softmax(a, axis=-1) + softmax(b, axis=0),
        lambda a, b: tmean(a, axis=0, keepdims=True) + b,
        lambda a, b: avg_pool1d_replicate(a, 3) * b,
        lambda a, b: concat([a, b], axis=0),
        lambda a, b: reshape(a, (12,)) + reshape(b, (12,)),
        lambda a, b: a[1:, :] * b[:-1, :],
    ],
)
def test_primitive_gradients_match_finite_differences(op):
    rng = np.random.default_rng(42)
    a = Parameter(rng.standard_normal((4, 3)), "a")
    b = Parameter(rng.standard_normal((4, 3)), "b")
    coef = Tensor(rng.standard_normal(op(a, b).shape))
    err = finite_difference_gradcheck(
        lambda: tsum(op(a, b) * coef),
        [a, b],
        n_samples=24,
        rng=np.random.default_rng(1),
    )
    assert err < 1e-4


def test_broadcast_gradients():
    rng = np.random.default_rng(9)
    a = Parameter(rng.standard_normal((4, 3)), "a")
    b = Parameter(rng.standard_normal(3), "b")  # broadcast across rows
    err = finite_difference_gradcheck(
        lambda: tsum((a * b + b) * (a + 1.0)), [a, b], n_samples=15
    )
    assert err < 1e-6


def test_no_grad_skips_graph():
    p = Parameter(np.ones(3), "p")
    with no_grad():
        out = p * 2.0
    assert not out.requires_grad
    assert out._parents == ()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_softmax_sums_to_one_property(values):
    y = softmax(Tensor(values)).data
    assert abs(y.sum() - 1.0) < 1e-9
    assert (y >= 0).all()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 3, 5, 7]))
def test_avg_pool_preserves_length_property(seed, k):
    x = np.random.default_rng(seed).standard_normal((9, 2))
    assert avg_pool1d_replicate(Tensor(x), k).shape == (9, 2)


def test_forward_values_finite_after_model_ops():
    rng = np.random.default_rng(11)
    x = Tensor(rng.standard_normal((5, 4)))
    y = softmax(exp(sigmoid(x)) * relu(x), axis=-1)
    assert np.isfinite(y.data).all()
