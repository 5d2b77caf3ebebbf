"""Unit tests for the reference simplex operations and the finite-difference checker."""
import math

import numpy as np
import pytest

from analysis import project_simplex_oracle
from numerics import (
    InvalidInputError,
    categorical_kl,
    finite_difference_check,
    softmax,
    sparsemax,
    sparsemax_backward,
    sparsemax_support,
)


# ---------------------------------------------------------------------------
# Sparsemax
# ---------------------------------------------------------------------------

class TestSparsemax:
    def test_two_element_closed_form(self):
        np.testing.assert_allclose(sparsemax([0.5, 0.0]), [0.75, 0.25], atol=1e-12)

    def test_large_margin_is_one_hot(self):
        np.testing.assert_array_equal(sparsemax([2.0, 0.0]), [1.0, 0.0])

    def test_constant_vector_is_uniform(self):
        np.testing.assert_allclose(sparsemax([4.2, 4.2, 4.2]), [1 / 3] * 3, atol=1e-12)

    def test_three_element_example(self):
        np.testing.assert_allclose(sparsemax([3.1, 2.6, 0.1]), [0.75, 0.25, 0.0], atol=1e-12)

    def test_output_on_simplex(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = sparsemax(rng.normal(scale=3.0, size=int(rng.integers(1, 10))))
            assert np.all(p >= 0)
            assert abs(p.sum() - 1.0) <= 1e-9

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            z = rng.normal(size=int(rng.integers(2, 9)))
            np.testing.assert_allclose(sparsemax(z), project_simplex_oracle(z), atol=1e-9)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=6)
        np.testing.assert_allclose(sparsemax(z + 7.5), sparsemax(z), atol=1e-12)

    def test_masked_entries_are_exact_zeros(self):
        p = sparsemax([0.5, 100.0, 0.0], mask=[True, False, True])
        assert p[1] == 0.0
        np.testing.assert_allclose(p, [0.75, 0.0, 0.25], atol=1e-12)

    def test_all_masked_raises(self):
        with pytest.raises(InvalidInputError):
            sparsemax([1.0, 2.0], mask=[False, False])

    def test_non_finite_raises(self):
        with pytest.raises(InvalidInputError):
            sparsemax([1.0, np.nan])

    def test_non_finite_under_mask_is_ignored(self):
        p = sparsemax([1.0, np.inf], mask=[True, False])
        np.testing.assert_array_equal(p, [1.0, 0.0])


class TestSparsemaxSupport:
    def test_example_threshold(self):
        res = sparsemax_support([3.1, 2.6, 0.1])
        assert res.support_size == 2
        assert res.threshold == pytest.approx(2.35, abs=1e-12)
        np.testing.assert_array_equal(res.support_mask, [True, True, False])

    def test_margin_excludes_second(self):
        res = sparsemax_support([2.0, 0.0])
        assert res.support_size == 1
        assert res.threshold == pytest.approx(1.0)

    def test_constant_vector(self):
        res = sparsemax_support([0.3] * 5)
        assert res.support_size == 5
        assert res.threshold == pytest.approx(0.3 - 1 / 5, abs=1e-12)

    def test_threshold_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            z = rng.normal(scale=2.0, size=7)
            res = sparsemax_support(z)
            assert abs(np.maximum(z - res.threshold, 0).sum() - 1.0) <= 1e-9

    def test_empty_raises(self):
        with pytest.raises(InvalidInputError):
            sparsemax_support([])


class TestSparsemaxBackward:
    def test_one_hot_support_gives_zero(self):
        np.testing.assert_array_equal(sparsemax_backward([1.0, 0.0], [3.0, -2.0]), [0.0, 0.0])

    def test_two_element_support(self):
        np.testing.assert_allclose(sparsemax_backward([0.75, 0.25], [1.0, 0.0]), [0.5, -0.5])

    def test_zero_upstream(self):
        np.testing.assert_array_equal(sparsemax_backward([0.2, 0.3, 0.5], [0.0, 0.0, 0.0]), [0.0] * 3)

    def test_matches_finite_differences_at_stable_support(self):
        rng = np.random.default_rng(4)
        z = np.array([1.2, 0.9, -0.8, 0.4, -2.0])
        w = rng.normal(size=5)
        p = sparsemax(z)
        report = finite_difference_check(
            lambda v: float(w @ sparsemax(v)), z, sparsemax_backward(p, w),
            signature=lambda v: tuple(sparsemax_support(v).support_mask),
        )
        assert report.passed
        assert report.kinks == []

    def test_shape_mismatch_raises(self):
        with pytest.raises(InvalidInputError):
            sparsemax_backward([0.5, 0.5], [1.0])


# ---------------------------------------------------------------------------
# Softmax / KL
# ---------------------------------------------------------------------------

class TestSoftmax:
    def test_zeros_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5])

    def test_shift_invariance(self):
        z = np.array([0.3, -1.0, 2.0])
        np.testing.assert_allclose(softmax(z + 40.0), softmax(z), atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        p = softmax([1000.0, 0.0])
        assert np.all(np.isfinite(p))
        assert p[0] == pytest.approx(1.0)
        assert p[1] == pytest.approx(0.0, abs=1e-300)

    def test_masked(self):
        p = softmax([0.0, 50.0, 0.0], mask=[True, False, True])
        np.testing.assert_allclose(p, [0.5, 0.0, 0.5])

    def test_all_masked_raises(self):
        with pytest.raises(InvalidInputError):
            softmax([0.0], mask=[False])


class TestCategoricalKL:
    def test_identical_is_zero(self):
        p = [0.2, 0.3, 0.5]
        assert categorical_kl(p, p) == pytest.approx(0.0, abs=1e-15)

    def test_one_hot_vs_uniform(self):
        assert categorical_kl([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)

    def test_zero_posterior_mass_is_clamped(self):
        eps = 1e-8
        expected = 0.5 * math.log(0.5 / eps) + 0.5 * math.log(0.5 / 1.0)
        got = categorical_kl([0.5, 0.5], [1.0, 0.0], eps=eps)
        assert math.isfinite(got)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_non_negative(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            p, q = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
            assert categorical_kl(p, q) >= 0.0

    def test_length_mismatch_raises(self):
        with pytest.raises(InvalidInputError):
            categorical_kl([0.5, 0.5], [1.0])


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

class TestFiniteDifferenceCheck:
    def test_square_passes(self):
        report = finite_difference_check(lambda v: float(v[0] ** 2), [3.0], [6.0])
        assert report.passed
        assert report.max_rel_error < 1e-8

    def test_wrong_gradient_fails(self):
        report = finite_difference_check(lambda v: float(v[0] ** 2), [3.0], [5.0])
        assert not report.passed
        assert report.failing == [0]

    def test_non_finite_reported_not_raised(self):
        report = finite_difference_check(lambda v: float("nan"), [1.0, 2.0], [0.0, 0.0])
        assert report.nonfinite == [0, 1]
        assert not report.passed

    def test_kinks_are_skipped(self):
        # |x| at 0 changes piece under either perturbation
        report = finite_difference_check(
            lambda v: float(abs(v[0])), [0.0], [0.0], signature=lambda v: bool(v[0] >= 0)
        )
        assert report.kinks == [0]
        assert report.passed
        assert report.kink_fraction == 1.0

    def test_coordinate_subset(self):
        report = finite_difference_check(lambda v: float(v @ v), [1.0, 2.0, 3.0], [2.0, 0.0, 6.0],
                                         coords=[0, 2])
        assert report.n_coords == 2
        assert report.passed

    def test_size_mismatch_raises(self):
        with pytest.raises(ValueError):
            finite_difference_check(lambda v: 0.0, [1.0, 2.0], [0.0])
