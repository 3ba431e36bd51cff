"""Tests for OLS fits, F statistics and the E/F/G reformulation."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from errors import NegativeVariance, NonpositiveDenominator, SingularDesign, ZeroVariance
from linear_model import (Dataset, GroupedDataset, OlsFit, SuffStatsRaw,
                          efg_decompose, f_stat_linear, f_stat_mixture,
                          f_stat_reformulated, linear_design_betas,
                          mixture_suff_stats, ols_linear, ols_mixture, suff_stats)


def _rss_difference_f(x, y):
    """(n-2) (||Y - X bN||^2 - ||Y - X b||^2) / ||Y - X b||^2 via least squares"""
    X = np.column_stack([np.ones_like(x), x])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    rss = np.sum((y - X @ beta) ** 2)
    rss0 = np.sum((y - y.mean()) ** 2)
    return (len(x) - 2) * (rss0 - rss) / rss


def _random_dataset(seed, n=None):
    gen = np.random.default_rng(seed)
    n = n or int(gen.integers(5, 60))
    x = gen.normal(gen.uniform(-2, 2), gen.uniform(0.2, 3), n)
    y = gen.uniform(-2, 2) + gen.uniform(-3, 3) * x + gen.normal(0, 1, n)
    return Dataset(x, y)


class TestSuffStats:

    def test_small_example(self):
        s = suff_stats(Dataset([1, 2, 3], [2, 4, 6]))
        assert s.xbar == pytest.approx(2)
        assert s.ybar == pytest.approx(4)
        assert s.x2bar == pytest.approx(14 / 3)
        assert s.xybar == pytest.approx(28 / 3)
        assert s.y2bar == pytest.approx(56 / 3)
        assert s.n == 3

    def test_zero_data(self):
        s = suff_stats(Dataset([0, 0, 0], [0, 0, 0]))
        assert (s.xbar, s.ybar, s.x2bar, s.xybar, s.y2bar) == (0, 0, 0, 0, 0)

    def test_constant_x_has_zero_variance(self):
        s = suff_stats(Dataset([3.0] * 4, [1, 2, 3, 4]))
        assert s.var_x == pytest.approx(0.0, abs=1e-12)


class TestOlsLinear:

    def test_perfect_fit(self):
        fit = ols_linear(suff_stats(Dataset([1, 2, 3], [2, 4, 6])))
        assert fit.beta1 == pytest.approx(2)
        assert fit.beta2 == pytest.approx(0, abs=1e-9)
        assert fit.rss == 0
        assert fit.s2 == 0

    def test_matches_normal_equations(self):
        x = np.array([1.0, 2, 3, 4])
        y = np.array([1.0, 2, 2, 4])
        X = np.column_stack([np.ones(4), x])
        intercept, slope = np.linalg.solve(X.T @ X, X.T @ y)
        rss = np.sum((y - intercept - slope * x) ** 2)

        fit = ols_linear(suff_stats(Dataset(x, y)))
        assert fit.beta1 == pytest.approx(slope)
        assert fit.beta2 == pytest.approx(intercept)
        assert fit.rss == pytest.approx(rss)
        assert fit.s2 == pytest.approx(rss / 2)

    def test_constant_x_is_singular(self):
        with pytest.raises(SingularDesign):
            ols_linear(suff_stats(Dataset([5, 5, 5], [1, 2, 3])))

    def test_large_y_offset_keeps_residuals(self):
        gen = np.random.default_rng(11)
        x = np.arange(1.0, 101.0)
        y = 1e6 + 0.01 * x + gen.normal(0, 0.3, 100)
        slope, intercept = np.polyfit(x, y - 1e6, 1)
        rss = np.sum((y - 1e6 - intercept - slope * x) ** 2)

        s = suff_stats(Dataset(x, y))
        fit = ols_linear(s)
        assert fit.rss > 0
        assert fit.rss == pytest.approx(rss, rel=2e-2)
        assert np.isfinite(f_stat_linear(fit, s))

    @given(st.integers(0, 10_000), st.floats(-10, 10), st.floats(-10, 10))
    @settings(max_examples=50, deadline=None)
    def test_affine_equivariance(self, seed, a, b):
        d = _random_dataset(seed)
        fit = ols_linear(suff_stats(d))
        moved = ols_linear(suff_stats(Dataset(d.x, a * d.y + b)))
        scale = 1 + abs(fit.beta1) + abs(fit.beta2) + abs(b)
        assert moved.beta1 == pytest.approx(a * fit.beta1, abs=1e-8 * scale * (1 + abs(a)))
        assert moved.beta2 == pytest.approx(a * fit.beta2 + b,
                                            abs=1e-8 * scale * (1 + abs(a)))


class TestFStatLinear:

    def test_zero_slope_gives_zero(self):
        s = SuffStatsRaw(xbar=0.5, ybar=1.0, x2bar=1.5, xybar=0.5, y2bar=2.0, n=10)
        assert f_stat_linear(OlsFit(beta1=0.0, beta2=1.0, s2=0.7, rss=5.6), s) == 0

    def test_matches_rss_difference(self):
        x = np.array([1.0, 2, 3, 4])
        y = np.array([1.0, 2, 2, 4])
        s = suff_stats(Dataset(x, y))
        assert f_stat_linear(ols_linear(s), s) == pytest.approx(_rss_difference_f(x, y))

    def test_scaling_y_leaves_statistic_unchanged(self):
        d = _random_dataset(3)
        s1 = suff_stats(d)
        s2 = suff_stats(Dataset(d.x, 2 * d.y))
        assert f_stat_linear(ols_linear(s2), s2) == pytest.approx(f_stat_linear(ols_linear(s1), s1))

    def test_perfect_fit_raises(self):
        s = suff_stats(Dataset([1, 2, 3], [2, 4, 6]))
        with pytest.raises(ZeroVariance):
            f_stat_linear(ols_linear(s), s)

    @pytest.mark.parametrize("seed", range(20))
    def test_pythagorean_identity(self, seed):
        d = _random_dataset(seed)
        s = suff_stats(d)
        assert f_stat_linear(ols_linear(s), s) == pytest.approx(_rss_difference_f(d.x, d.y),
                                                                rel=1e-8)

    def test_null_distribution_is_f(self):
        gen = np.random.default_rng(2024)
        n = 100
        draws = []
        for _ in range(5000):
            x = gen.normal(0.5, 1.0, n)
            s = suff_stats(Dataset(x, gen.normal(0, 0.35, n)))
            draws.append(f_stat_linear(ols_linear(s), s))
        assert stats.kstest(draws, stats.f(1, n - 2).cdf).statistic <= 0.03


class TestMixture:

    def test_exact_fits(self):
        g = GroupedDataset([1, 2, 1, 2], [1, 2, 3, 6], 2)
        fit = ols_mixture(g)
        assert fit.beta1 == pytest.approx(1)
        assert fit.beta2 == pytest.approx(3)
        assert fit.rss == 0

    def test_per_group_least_squares(self):
        fit = ols_mixture(GroupedDataset([1, 1, 2, 2], [1, 2, 2, 2], 2))
        assert fit.beta1 == pytest.approx(1.5)
        assert fit.beta2 == pytest.approx(1.0)
        assert fit.rss == pytest.approx(0.5)
        assert fit.s2 == pytest.approx(0.25)

    def test_all_zero_group_is_singular(self):
        with pytest.raises(SingularDesign):
            ols_mixture(GroupedDataset([1, 2, 0, 0], [1, 2, 3, 4], 2))

    def test_large_x_offset_keeps_residuals(self):
        gen = np.random.default_rng(12)
        x = 1e6 + gen.normal(0, 1, 200)
        y = x + gen.normal(0, 0.3, 200)
        rss = 0.0
        for xs, ys in ((x[:100], y[:100]), (x[100:], y[100:])):
            slope = np.sum(xs * ys) / np.sum(xs * xs)
            rss += np.sum((ys - slope * xs) ** 2)

        fit = ols_mixture(GroupedDataset(x, y, 100))
        assert fit.rss > 0
        assert fit.rss == pytest.approx(rss, rel=0.05)

    def test_matches_rss_difference(self):
        g = GroupedDataset([1, 1, 1, 1], [1, 2, 3, 4], 2)
        fit = ols_mixture(g)
        assert (fit.beta1, fit.beta2) == pytest.approx((1.5, 3.5))
        # pooled null slope 2.5: rss0 = 5, rss = 1
        assert f_stat_mixture(fit, mixture_suff_stats(g)) == pytest.approx(2 * (5 - 1) / 1)

    def test_equal_slopes_give_zero(self):
        g = GroupedDataset([1, 2, 3, 1, 2, 3], [1.1, 1.9, 3.2, 0.9, 2.1, 2.8], 3)
        fit = ols_mixture(g)
        same = OlsFit(beta1=fit.beta1, beta2=fit.beta1, s2=fit.s2, rss=fit.rss)
        assert f_stat_mixture(same, mixture_suff_stats(g)) == 0

    def test_equal_groups_reduce_to_symmetric_form(self):
        x = np.array([1.0, 2, 3])
        g = GroupedDataset(np.concatenate([x, x]), [1.2, 1.8, 3.1, 2.0, 4.3, 5.8], 3)
        fit = ols_mixture(g)
        m = mixture_suff_stats(g)
        expected = g.n * m.x2bar / (4 * fit.s2) * (fit.beta1 - fit.beta2) ** 2
        assert f_stat_mixture(fit, m) == pytest.approx(expected)

    @pytest.mark.parametrize("seed", range(10))
    def test_swapping_groups(self, seed):
        gen = np.random.default_rng(seed)
        n1 = int(gen.integers(2, 20))
        x = gen.normal(0, 1, n1 + 15)
        y = np.where(np.arange(x.size) < n1, 1.0, -0.5) * x + gen.normal(0, 1, x.size)
        g = GroupedDataset(x, y, n1)
        h = g.swapped()
        assert h.n1 == g.n2
        assert f_stat_mixture(ols_mixture(h), mixture_suff_stats(h)) == pytest.approx(
            f_stat_mixture(ols_mixture(g), mixture_suff_stats(g)))

    def test_perfect_fit_raises(self):
        g = GroupedDataset([1, 2, 1, 2], [1, 2, 3, 6], 2)
        with pytest.raises(ZeroVariance):
            f_stat_mixture(ols_mixture(g), mixture_suff_stats(g))


class TestEFG:

    def test_identity_case(self):
        e = efg_decompose(SuffStatsRaw(0.0, 0.0, 1.0, 0.0, 1.0, 10))
        np.testing.assert_allclose(e.E, np.eye(2), atol=1e-15)

    def test_square_recovers_gram_matrix(self):
        e = efg_decompose(SuffStatsRaw(1.0, 0.0, 2.0, 0.0, 1.0, 10))
        np.testing.assert_allclose(e.E @ e.E, [[1, 1], [1, 2]], rtol=1e-10)

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_square_recovers_gram_matrix_for_data(self, seed):
        s = suff_stats(_random_dataset(seed))
        e = efg_decompose(s)
        np.testing.assert_allclose(e.E @ e.E, [[1, s.xbar], [s.xbar, s.x2bar]],
                                   rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(e.E, e.E.T)

    def test_negative_variance(self):
        with pytest.raises(NegativeVariance):
            efg_decompose(SuffStatsRaw(1.0, 0.0, 0.9, 0.0, 1.0, 10))

    def test_matches_direct_statistic(self):
        for seed in range(1000):
            s = suff_stats(_random_dataset(seed))
            fit = ols_linear(s)
            beta, beta_null = linear_design_betas(fit, s)
            assert f_stat_reformulated(efg_decompose(s), beta, beta_null, s.n) == \
                pytest.approx(f_stat_linear(fit, s), rel=1e-8)

    def test_null_beta_gives_zero(self):
        s = suff_stats(_random_dataset(7))
        _, beta_null = linear_design_betas(ols_linear(s), s)
        assert f_stat_reformulated(efg_decompose(s), beta_null, beta_null, s.n) == 0

    def test_identity_numerator(self):
        s = SuffStatsRaw(0.0, 0.0, 1.0, 0.0, 10.0, 20)
        e = efg_decompose(s)
        beta = np.array([1.0, 2.0])
        beta_null = np.array([0.5, 0.0])
        denominator = s.n * (beta @ beta - 2 * beta @ e.F + e.G)
        expected = (s.n - 2) * s.n * np.sum((beta - beta_null) ** 2) / denominator
        assert f_stat_reformulated(e, beta, beta_null, s.n) == pytest.approx(expected)

    def test_nonpositive_denominator(self):
        e = efg_decompose(SuffStatsRaw(0.0, 1.0, 1.0, 0.0, 0.0, 10))
        with pytest.raises(NonpositiveDenominator):
            f_stat_reformulated(e, np.array([1.0, 0.0]), np.zeros(2), 10)
