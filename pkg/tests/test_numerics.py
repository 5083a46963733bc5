import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hybridmem.errors import EmptyAxis, NonFiniteValue, ShapeMismatch
from hybridmem.numerics import attention, pairwise_neg_l2, softmax


def test_softmax_examples():
    np.testing.assert_allclose(softmax([[0, 0]]), [[0.5, 0.5]], atol=1e-7)
    np.testing.assert_allclose(softmax([[3.7]]), [[1.0]])
    # 1/(1+e), e/(1+e)
    np.testing.assert_allclose(softmax([[0, 1]]), [[0.26894, 0.73106]], atol=1e-4)


def test_softmax_columns():
    out = softmax([[0.0, 5.0], [1.0, 5.0]], axis="cols")
    np.testing.assert_allclose(out.sum(0), [1, 1], atol=1e-6)
    np.testing.assert_allclose(out[:, 1], [0.5, 0.5])


def test_softmax_errors():
    with pytest.raises(EmptyAxis):
        softmax(np.zeros((2, 0)))
    with pytest.raises(NonFiniteValue):
        softmax([[0.0, np.nan]])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
              elements=st.floats(-1e4, 1e4)))
def test_softmax_rows_stable(x):
    out = softmax(x)
    assert np.all(np.isfinite(out))
    assert np.all(out >= 0) and np.all(out <= 1)
    np.testing.assert_allclose(out.astype(np.float64).sum(1), 1.0, atol=1e-5)


def test_pairwise_neg_l2_examples():
    np.testing.assert_array_equal(pairwise_neg_l2([[1, 2]], [[1, 2]]), [[0]])
    np.testing.assert_allclose(pairwise_neg_l2([[0, 0]], [[3, 4]]), [[-25]])
    np.testing.assert_allclose(pairwise_neg_l2([[1]], [[1], [2]]), [[0, -1]])
    with pytest.raises(ShapeMismatch):
        pairwise_neg_l2([[1, 2]], [[1, 2, 3]])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pairwise_neg_l2_transpose_symmetry(seed):
    rng = np.random.default_rng(seed)
    Q, K = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    a = pairwise_neg_l2(Q, K)
    assert np.all(a <= 0)
    np.testing.assert_allclose(a, pairwise_neg_l2(K, Q).T, atol=1e-5)


def test_attention_examples():
    V = np.array([[1.5, -2.0]])
    for q in ([[0.0, 1.0]], [[100.0, -3.0]]):
        np.testing.assert_allclose(attention(q, [[1.0, 2.0]], V), V)
    out = attention([[0.3, 0.4]], [[1.0, 1.0], [1.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(out, [[0.5, 0.5]], atol=1e-6)
    expected = math.exp(1) / (math.exp(1) + math.exp(-1))
    np.testing.assert_allclose(attention([[1]], [[1], [-1]], [[1], [0]]), [[expected]], atol=1e-6)
    np.testing.assert_allclose(expected, 0.8808, atol=1e-3)


def test_attention_shape_errors():
    with pytest.raises(ShapeMismatch):
        attention(np.ones((1, 2)), np.ones((3, 3)), np.ones((3, 1)))
    with pytest.raises(ShapeMismatch):
        attention(np.ones((1, 2)), np.ones((3, 2)), np.ones((2, 1)))


def test_attention_convex_hull_and_permutation():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n, m, d, c = rng.integers(1, 6, size=4)
        Q, K, V = rng.normal(size=(n, d)) * 3, rng.normal(size=(m, d)) * 3, rng.normal(size=(m, c))
        out = attention(Q, K, V)
        assert np.all(out >= V.min(0) - 1e-5) and np.all(out <= V.max(0) + 1e-5)
    perm = rng.permutation(m)
    np.testing.assert_allclose(attention(Q, K[perm], V[perm]), out, atol=1e-5)
