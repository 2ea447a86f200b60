import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from lgflow.gof import (
    EXPECTED,
    UNEXPECTED,
    GofConfig,
    critical_value,
    decide,
    ks_test,
    mv_ks_statistic,
    product_cdf,
    std_normal_cdf,
)


def classical_ks(x):
    """Sort-based one-sample KS against N(0, 1)."""
    x = np.sort(x)
    n = len(x)
    F = np.array([std_normal_cdf(v) for v in x])
    i = np.arange(1, n + 1)
    return max(np.max(i / n - F), np.max(F - (i - 1) / n))


def brute_orthant(x):
    """O(n^2 d) definition, evaluated point by point."""
    n = len(x)
    worst = 0.0
    for p in x:
        le = np.all(x <= p, axis=1)
        lt_edge = le & ~np.all(x == p, axis=1)
        F = np.prod([std_normal_cdf(v) for v in p])
        worst = max(worst, abs(le.sum() / n - F), abs(lt_edge.sum() / n - F))
    return worst


class TestNormalCdf:
    @pytest.mark.parametrize("x", [-4.0, -1.3, 0.0, 0.5, 2.2])
    def test_against_quadrature(self, x):
        val, _ = integrate.quad(lambda u: math.exp(-u * u / 2) / math.sqrt(2 * math.pi), -np.inf, x)
        assert std_normal_cdf(x) == pytest.approx(val, abs=1e-12)

    def test_symmetry(self):
        xs = np.linspace(-6, 6, 41)
        np.testing.assert_allclose(std_normal_cdf(xs) + std_normal_cdf(-xs), 1.0, atol=1e-15)

    def test_product(self):
        x = np.array([[0.0, 0.0], [0.0, 10.0]])
        np.testing.assert_allclose(product_cdf(x), [0.25, 0.5])


class TestStatistic:
    def test_quantile_sample(self):
        q = stats.norm.ppf((np.arange(1, 11) - 0.5) / 10)
        assert mv_ks_statistic(q) == pytest.approx(0.05, abs=1e-12)

    def test_single_point_at_origin(self):
        assert mv_ks_statistic(np.zeros((1, 1))) == pytest.approx(0.5, abs=1e-15)

    def test_d1_matches_sort_oracle(self):
        for seed in range(20):
            x = np.random.default_rng(seed).normal(size=int(5 + 40 * seed))
            assert abs(mv_ks_statistic(x) - classical_ks(x)) < 1e-12

    def test_d1_matches_scipy(self):
        x = np.random.default_rng(3).normal(size=200)
        assert mv_ks_statistic(x) == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-12)

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_brute_force(self, d):
        rng = np.random.default_rng(d)
        x = rng.normal(size=(40, d))
        x[5] = x[3]  # a tie
        assert mv_ks_statistic(x) == pytest.approx(brute_orthant(x), abs=1e-14)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(100, 3))
        assert mv_ks_statistic(x) == mv_ks_statistic(x[rng.permutation(100)])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 4), st.integers(0, 10_000))
    def test_bounds(self, n, d, seed):
        s = mv_ks_statistic(np.random.default_rng(seed).normal(size=(n, d)))
        assert 0.0 <= s <= 1.0

    def test_shifted_sample_detected(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(500, 2))
        assert mv_ks_statistic(x + 1.0) > mv_ks_statistic(x)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            mv_ks_statistic(np.zeros((0, 2)))
        with pytest.raises(ValueError):
            mv_ks_statistic(np.array([[np.nan, 0.0]]))


class TestCriticalValue:
    def test_example(self):
        assert critical_value(100, 1, 0.05) == pytest.approx(math.sqrt(math.log(2020) / 200), abs=1e-15)
        assert critical_value(100, 1, 0.05) == pytest.approx(0.19508, abs=1e-5)

    def test_sequence_level_value(self):
        assert critical_value(1000, 4, 0.05) == pytest.approx(0.075, abs=1e-3)

    def test_monotone(self):
        assert critical_value(200, 4, 0.05) < critical_value(100, 4, 0.05)
        assert critical_value(100, 8, 0.05) > critical_value(100, 4, 0.05)
        assert critical_value(100, 4, 0.01) > critical_value(100, 4, 0.05)

    def test_capped(self):
        assert critical_value(1, 4, 0.05) == 1.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            critical_value(10, 1, 1.5)
        with pytest.raises(ValueError):
            critical_value(0, 1, 0.05)
        with pytest.raises(ValueError):
            GofConfig(alpha=0.0)


class TestDecision:
    def test_examples(self):
        assert decide(0.05, 0.1) == EXPECTED
        assert decide(0.1, 0.1) == UNEXPECTED
        assert decide(0.3, 0.1) == UNEXPECTED

    def test_ks_test_result(self):
        x = np.random.default_rng(0).normal(size=(400, 2))
        r = ks_test(x, 0.05)
        assert (r.n, r.d) == (400, 2)
        assert r.critical_value == critical_value(400, 2, 0.05)
        assert r.compliant

    def test_consistency(self):
        # a unit mean shift is rejected in the large majority of draws
        rejected = [
            not ks_test(np.random.default_rng(s).normal(1.0, 1.0, size=(256, 2))).compliant
            for s in range(20)
        ]
        assert np.median(rejected) == 1
