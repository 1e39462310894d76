"""Attention cores: algebraic equivalence, bounds, and the ablation arm."""

import numpy as np
import pytest

from fastattn.attention import (cosine_affinity, cosine_attention_quadratic,
                                dot_affinity, dot_attention_unnormalized,
                                fast_attention, softmax_attention)
from fastattn.core import ShapeError, l2_normalize_rows, random_matrix
from fastattn.counting import count_ops


def _triple(n, cprime, channels, seed):
    q = random_matrix(n, cprime, [seed, 0], "normal")
    k = random_matrix(n, cprime, [seed, 1], "normal")
    v = random_matrix(n, cprime if channels is None else channels, [seed, 2], "normal")
    return q, k, v


def _max_rel_dev(a, b):
    scale = max(np.max(np.abs(b)), 1e-300)
    return np.max(np.abs(a - b)) / scale


@pytest.mark.parametrize("n", [1, 8, 64, 256])
@pytest.mark.parametrize("channels", [1, 16, 64])
@pytest.mark.parametrize("cprime", [1, 32])
def test_fast_equals_quadratic(n, channels, cprime):
    q, k, v = _triple(n, cprime, channels, seed=n * 1000 + channels * 10 + cprime)
    fast = fast_attention(q, k, v)
    quad = cosine_attention_quadratic(q, k, v)
    assert _max_rel_dev(fast, quad) <= 1e-10


def test_fast_equals_quadratic_float32_loose():
    q, k, v = _triple(128, 16, 24, seed=3)
    fast = fast_attention(q.astype(np.float32), k.astype(np.float32), v.astype(np.float32))
    quad = cosine_attention_quadratic(q.astype(np.float32), k.astype(np.float32),
                                      v.astype(np.float32))
    assert _max_rel_dev(fast, quad) <= 1e-4


def test_single_position_returns_value_row():
    # n=1 with q == k: cosine similarity is 1, scaling is 1/1
    q = np.array([[0.3, -0.7, 2.0]])
    v = np.array([[5.0, 6.0]])
    np.testing.assert_allclose(fast_attention(q, q, v), v, atol=1e-12)


def test_orthogonal_query_key_gives_zero():
    q = np.array([[1.0, 0.0], [1.0, 0.0]])
    k = np.array([[0.0, 1.0], [0.0, 1.0]])
    v = random_matrix(2, 4, 0, "normal")
    np.testing.assert_allclose(fast_attention(q, k, v), 0.0, atol=1e-15)


def test_affinity_entries_in_unit_interval():
    for seed in range(6):
        q = random_matrix(40, 7, [seed, 0], "normal") * 10.0 ** (seed - 2)
        k = random_matrix(40, 7, [seed, 1], "normal") * 10.0 ** (seed - 2)
        aff = cosine_affinity(q, k)
        assert np.all(aff >= -1.0 - 1e-12)
        assert np.all(aff <= 1.0 + 1e-12)


def test_affinity_diagonal_of_self_is_one():
    q = random_matrix(10, 5, 2, "normal")
    np.testing.assert_allclose(np.diag(cosine_affinity(q, q)), 1.0, atol=1e-12)


def test_unnormalized_affinity_escapes_unit_interval():
    # documented witness: rows (2, 0) and (3, 0) have raw product 6
    raw = dot_affinity(np.array([[2.0, 0.0]]), np.array([[3.0, 0.0]]))
    assert raw[0, 0] == 6.0
    assert abs(raw[0, 0]) > 1.0


def test_unnormalized_core_on_unit_rows_matches_fast():
    # the ablation arm coincides with the normalized core exactly when the
    # inputs already have unit rows
    q, k, v = _triple(96, 9, 13, seed=8)
    qn, kn = l2_normalize_rows(q), l2_normalize_rows(k)
    np.testing.assert_allclose(dot_attention_unnormalized(qn, kn, v),
                               fast_attention(q, k, v), rtol=0, atol=1e-13)


def test_softmax_attention_rows_are_convex_combinations():
    q, k, v = _triple(30, 6, 1, seed=5)
    out = softmax_attention(q, k, v)
    assert np.all(out >= v.min() - 1e-12)
    assert np.all(out <= v.max() + 1e-12)


def test_softmax_attention_hand_case():
    # each row has one dominant logit that selects its own value row
    q = np.array([[10.0, 0.0], [-10.0, 0.0]])
    k = np.array([[100.0, 0.0], [-100.0, 0.0]])
    v = np.array([[1.0, 2.0], [-1.0, -2.0]])
    np.testing.assert_allclose(softmax_attention(q, k, v), v, atol=1e-8)


def test_fast_attention_is_scale_invariant_in_query_and_key():
    q, k, v = _triple(50, 8, 12, seed=7)
    base = fast_attention(q, k, v)
    scaled = fast_attention(q * 37.5, k * 0.004, v)
    np.testing.assert_allclose(scaled, base, rtol=0, atol=1e-12)


def test_fast_attention_linear_in_value():
    q, k, v = _triple(50, 8, 12, seed=9)
    np.testing.assert_allclose(fast_attention(q, k, 3.0 * v),
                               3.0 * fast_attention(q, k, v), rtol=1e-12)


def test_zero_norm_query_rows_give_zero_output_rows():
    q = random_matrix(6, 4, 1, "normal")
    q[2] = 0.0
    k, v = random_matrix(6, 4, 2, "normal"), random_matrix(6, 3, 3, "normal")
    out = fast_attention(q, k, v)
    np.testing.assert_array_equal(out[2], 0.0)
    assert np.all(np.isfinite(out))


def test_shape_mismatches_rejected():
    with pytest.raises(ShapeError):
        fast_attention(np.ones((4, 3)), np.ones((4, 2)), np.ones((4, 5)))
    with pytest.raises(ShapeError):
        fast_attention(np.ones((4, 3)), np.ones((4, 3)), np.ones((3, 5)))
    with pytest.raises(ShapeError):
        cosine_affinity(np.ones((4, 3)), np.ones((5, 3)))


def test_mac_counts_linear_vs_quadratic():
    n, cprime, channels = 64, 8, 16
    q, k, v = _triple(n, cprime, channels, seed=11)
    with count_ops() as fast_ops:
        fast_attention(q, k, v)
    with count_ops() as quad_ops:
        cosine_attention_quadratic(q, k, v)
    assert fast_ops.macs == 2 * n * cprime * channels
    assert quad_ops.macs == n * n * cprime + n * n * channels


def test_results_deterministic_for_seed():
    q, k, v = _triple(33, 5, 7, seed=21)
    q2, k2, v2 = _triple(33, 5, 7, seed=21)
    np.testing.assert_array_equal(fast_attention(q, k, v), fast_attention(q2, k2, v2))
