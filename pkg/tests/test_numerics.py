import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from fliplab import (
    QuadratureRule,
    derive_stream,
    gauss_hermite_expect,
    monte_carlo_expect,
    normality_check,
    sample_gaussian_matrix,
    summarize,
    wilson_interval,
)
from fliplab.numerics import ensure_finite


class TestStreams:
    def test_same_ids_same_sequence(self):
        a = derive_stream(42, 0).standard_normal(100)
        b = derive_stream(42, 0).standard_normal(100)
        assert np.array_equal(a, b)

    def test_distinct_stream_ids_uncorrelated(self):
        a = derive_stream(42, 0).standard_normal(10_000)
        b = derive_stream(42, 1).standard_normal(10_000)
        rho = float(np.corrcoef(a, b)[0, 1])
        assert abs(rho) < 0.05

    def test_distinct_seeds_differ(self):
        a = derive_stream(42, 0).standard_normal(100)
        b = derive_stream(43, 0).standard_normal(100)
        assert not np.array_equal(a, b)

    def test_substream_labels_independent(self):
        s = derive_stream(7, 3)
        a = s.substream("net").standard_normal(1000)
        b = s.substream("x").standard_normal(1000)
        assert not np.array_equal(a, b)
        again = derive_stream(7, 3).substream("net").standard_normal(1000)
        assert np.array_equal(a, again)

    def test_int_and_string_labels_coexist(self):
        s = derive_stream(7, 3)
        assert not np.array_equal(
            s.substream(0).standard_normal(100),
            s.substream("0").standard_normal(100),
        )


class TestGaussianMatrix:
    def test_entry_variance(self):
        m = sample_gaussian_matrix(derive_stream(1, 0), 500, 500, 1.0 / 500)
        var = float(np.var(m))
        assert abs(var - 1.0 / 500) < 0.05 / 500

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError):
            sample_gaussian_matrix(derive_stream(1, 0), 4, 4, 0.0)

    def test_deterministic(self):
        a = sample_gaussian_matrix(derive_stream(1, 1), 8, 3, 2.0)
        b = sample_gaussian_matrix(derive_stream(1, 1), 8, 3, 2.0)
        assert np.array_equal(a, b)


class TestQuadrature:
    def test_monomial_z8(self, fixtures):
        rule = QuadratureRule.gauss_hermite(5)
        value = gauss_hermite_expect(lambda z: z**8, 1, rule)
        expected = fixtures["gh_monomial_z8"]
        assert value == pytest.approx(expected, rel=1e-10)

    def test_odd_function_vanishes(self):
        assert abs(gauss_hermite_expect(lambda z: z, 1)) < 1e-12

    def test_degree_2n_minus_1_exact(self):
        # z^14 against N=8: double factorial 13!! = 135135
        rule = QuadratureRule.gauss_hermite(8)
        value = gauss_hermite_expect(lambda z: z**14, 1, rule)
        assert value == pytest.approx(135135.0, rel=1e-10)

    def test_tanh_square_matches_mc_oracle(self, fixtures):
        value = gauss_hermite_expect(lambda z: np.tanh(z) ** 2, 1)
        # oracle: 1e7-sample MC; 3 oracle stderr is about 3e-4
        assert value == pytest.approx(fixtures["tanh"]["sigma2"], abs=3e-4)

    def test_nonfinite_integrand_raises(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            with pytest.raises(ArithmeticError):
                gauss_hermite_expect(lambda z: 1.0 / (z - z), 1)

    def test_bad_dims_rejected(self):
        with pytest.raises(ValueError):
            gauss_hermite_expect(lambda z: z, 4)


class TestMonteCarlo:
    def test_constant(self):
        stats = monte_carlo_expect(lambda z: np.ones_like(z), 1, 100,
                                   derive_stream(5, 0))
        assert stats.mean == 1.0
        assert stats.stderr == 0.0

    def test_indicator_half(self):
        stats = monte_carlo_expect(lambda z: (z > 0).astype(float), 1,
                                   1_000_000, derive_stream(5, 1))
        assert abs(stats.mean - 0.5) <= 3 * stats.stderr

    def test_relu_2d_integrand_vs_quadrature_oracle(self, fixtures):
        def f(g, b):
            dg = (g > 0).astype(float)
            return dg * ((g - 0.1 * b * dg) > 0)

        stats = monte_carlo_expect(f, 2, 1_000_000, derive_stream(5, 2))
        assert abs(stats.mean - fixtures["quad2d_relu"]["quad_value"]) \
            <= 3 * stats.stderr

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            monte_carlo_expect(lambda z: z, 1, 1, derive_stream(5, 3))


class TestWilson:
    def test_zero_successes_floor(self):
        lo, hi = wilson_interval(0, 10, 0.95)
        assert lo == 0.0
        assert hi > 0.0

    def test_all_successes_ceiling(self):
        lo, hi = wilson_interval(10, 10, 0.95)
        assert hi == 1.0
        assert lo < 1.0

    def test_symmetric_at_half(self):
        lo, hi = wilson_interval(50, 100, 0.95)
        assert abs((0.5 - lo) - (hi - 0.5)) < 1e-12

    @given(trials=st.integers(1, 1000), frac=st.floats(0.0, 1.0))
    @settings(max_examples=60, deadline=None)
    def test_interval_brackets_estimate(self, trials, frac):
        successes = int(round(frac * trials))
        lo, hi = wilson_interval(successes, trials, 0.95)
        p_hat = successes / trials
        assert 0.0 <= lo <= p_hat <= hi <= 1.0

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            wilson_interval(5, 4, 0.95)
        with pytest.raises(ValueError):
            wilson_interval(1, 4, 1.0)


class TestNormalityCheck:
    def test_point_mass_ks_half(self):
        ks, moments = normality_check(np.zeros(100))
        assert ks == pytest.approx(0.5, abs=1e-12)

    def test_true_normals_pass_mostly(self):
        n, passes, reps = 100_000, 0, 60
        critical = 1.95 / math.sqrt(n)
        for rep in range(reps):
            sample = derive_stream(9, rep).standard_normal(n)
            ks, _ = normality_check(sample)
            passes += ks < critical
        assert passes >= 0.95 * reps

    def test_fourth_moment(self):
        sample = derive_stream(9, 999).standard_normal(1_000_000)
        _, moments = normality_check(sample)
        assert moments[3] == pytest.approx(3.0, rel=0.05)

    def test_matches_scipy_ks(self):
        sample = derive_stream(9, 1000).standard_normal(5000)
        ks, _ = normality_check(sample)
        reference = scipy.stats.kstest(sample, "norm").statistic
        assert ks == pytest.approx(reference, abs=1e-10)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            normality_check(np.zeros(29))


class TestSummarize:
    def test_single_value(self):
        stats = summarize([3.5])
        assert (stats.count, stats.mean, stats.stderr) == (1, 3.5, 0.0)
        assert stats.min == stats.max == 3.5

    def test_stderr_definition(self):
        values = np.array([1.0, 2.0, 3.0, 4.0])
        stats = summarize(values)
        assert stats.stderr == pytest.approx(
            float(np.std(values, ddof=1)) / 2.0, rel=1e-12)

    def test_ensure_finite_raises(self):
        with pytest.raises(ArithmeticError):
            ensure_finite(np.array([1.0, np.inf]), "probe")
