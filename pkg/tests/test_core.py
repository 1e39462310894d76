import numpy as np
import pytest

from fastattn.core import (FeatureMap, ShapeError, eps_for, l2_normalize_rows,
                           matmul, random_matrix, softmax_rows, transpose)
from fastattn.counting import count_ops


def test_matmul_hand_values():
    out = matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(out, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_identity():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((6, 6))
    np.testing.assert_array_equal(matmul(a, np.eye(6)), a)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((4, 2)))


@pytest.mark.parametrize("bad", [np.ones(3), np.ones((2, 2, 2)), np.ones((0, 3))])
def test_matmul_rejects_non_matrices(bad):
    with pytest.raises(ShapeError):
        matmul(bad, np.ones((3, 3)))


def test_matmul_counts_macs():
    with count_ops() as ops:
        matmul(np.ones((7, 11)), np.ones((11, 13)))
    assert ops.macs == 7 * 11 * 13 == 1001
    assert ops.adds == 0


def test_nested_counters_both_tally():
    with count_ops() as outer:
        matmul(np.ones((2, 2)), np.ones((2, 2)))
        with count_ops() as inner:
            matmul(np.ones((3, 3)), np.ones((3, 3)))
    assert inner.macs == 27
    assert outer.macs == 8 + 27


def test_matmul_exact_matches_triple_loop_bitwise():
    # the exact mode must round identically to scalar sequential accumulation
    rng = np.random.default_rng(123)
    a = rng.standard_normal((13, 9))
    b = rng.standard_normal((9, 8))
    reference = np.zeros((13, 8))
    for i in range(13):
        for j in range(8):
            acc = 0.0
            for k in range(9):
                acc += a[i, k] * b[k, j]
            reference[i, j] = acc
    assert np.array_equal(matmul(a, b, exact=True), reference)


def test_matmul_exact_agrees_with_blas_numerically():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((20, 30))
    b = rng.standard_normal((30, 10))
    np.testing.assert_allclose(matmul(a, b, exact=True), a @ b, rtol=1e-13)


def test_transpose_involution():
    a = random_matrix(4, 7, 0)
    np.testing.assert_array_equal(transpose(transpose(a)), a)


class TestL2Normalize:
    def test_hand_row(self):
        out = l2_normalize_rows(np.array([[3.0, 4.0]]))
        np.testing.assert_allclose(out, [[0.6, 0.8]], atol=1e-15)

    def test_unit_norms(self):
        rows = random_matrix(50, 6, 3, "normal")
        norms = np.linalg.norm(l2_normalize_rows(rows), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_idempotent(self):
        rows = random_matrix(30, 5, 4, "normal")
        once = l2_normalize_rows(rows)
        np.testing.assert_allclose(l2_normalize_rows(once), once, atol=1e-12)

    def test_zero_row_maps_to_zero(self):
        out = l2_normalize_rows(np.zeros((2, 4)))
        np.testing.assert_array_equal(out, np.zeros((2, 4)))

    def test_subthreshold_row_scaled_not_normalized(self):
        # rows under the guard are divided by eps, keeping norm < 1
        row = np.full((1, 4), 1e-14)
        out = l2_normalize_rows(row, eps=1e-12)
        np.testing.assert_allclose(out, row / 1e-12)
        assert np.linalg.norm(out) < 1.0

    def test_norm_never_exceeds_one(self):
        rows = random_matrix(40, 3, 9, "normal") * 1e-13
        norms = np.linalg.norm(l2_normalize_rows(rows, eps=1e-12), axis=1)
        assert np.all(norms <= 1.0 + 1e-15)

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            l2_normalize_rows(np.ones((2, 2)), eps=0.0)

    def test_eps_defaults_per_dtype(self):
        assert eps_for(np.float64) == 1e-12
        assert eps_for(np.float32) == 1e-6


def test_softmax_rows_sum_to_one():
    logits = random_matrix(9, 7, 11, "normal") * 30
    out = softmax_rows(logits)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(out >= 0)


def test_softmax_rows_survives_large_logits():
    out = softmax_rows(np.array([[1e4, 1e4 + 1.0]]))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out.sum(), 1.0, atol=1e-12)


def test_softmax_uniform_row():
    out = softmax_rows(np.full((1, 5), 3.25))
    np.testing.assert_allclose(out, 0.2, atol=1e-15)


class TestRandomMatrix:
    def test_seed_determinism(self):
        a = random_matrix(12, 7, 42, "normal")
        b = random_matrix(12, 7, 42, "normal")
        np.testing.assert_array_equal(a, b)

    def test_seeds_differ(self):
        assert not np.array_equal(random_matrix(12, 7, 1), random_matrix(12, 7, 2))

    def test_uniform_range(self):
        m = random_matrix(100, 10, 0, "uniform")
        assert np.all(m >= 0.0) and np.all(m < 1.0)

    def test_symmetric_range(self):
        m = random_matrix(100, 10, 0, "symmetric")
        assert np.all(m >= -1.0) and np.all(m < 1.0)

    def test_unknown_distribution(self):
        with pytest.raises(ValueError):
            random_matrix(2, 2, 0, "cauchy")

    def test_f32_output(self):
        m = random_matrix(4, 4, 0, dtype=np.float32)
        assert m.dtype == np.float32


class TestFeatureMap:
    def test_flatten_is_pixel_major(self):
        # one channel, 2x2 spatial: rows of the flat matrix walk H then W
        fm = FeatureMap(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        np.testing.assert_array_equal(fm.flatten(), [[1.0], [2.0], [3.0], [4.0]])

    def test_two_channel_columns(self):
        data = np.stack([np.arange(6.0).reshape(2, 3),
                         10 + np.arange(6.0).reshape(2, 3)])
        flat = FeatureMap(data).flatten()
        assert flat.shape == (6, 2)
        np.testing.assert_array_equal(flat[:, 1] - flat[:, 0], 10.0)

    def test_roundtrip(self):
        fm = FeatureMap(np.random.default_rng(0).standard_normal((5, 4, 6)))
        back = FeatureMap.from_flat(fm.flatten(), 4, 6)
        np.testing.assert_array_equal(back.data, fm.data)

    def test_from_flat_row_count_checked(self):
        with pytest.raises(ShapeError):
            FeatureMap.from_flat(np.ones((7, 3)), 2, 4)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ShapeError):
            FeatureMap(np.ones((3, 3)))

    def test_properties(self):
        fm = FeatureMap(np.zeros((3, 4, 5)))
        assert (fm.channels, fm.height, fm.width, fm.spatial_size) == (3, 4, 5, 20)
