"""Tests for marginals, the Gaussian copula sampler and constraint shifting."""

import numpy as np
import pytest
from scipy import stats

from modules import copula, corrmat
from modules.errors import DegenerateSupport, DomainError, InvalidMatrix, ZeroVariance


def pair_matrix(rho):
    C = np.eye(3)
    C[0, 1] = C[1, 0] = rho
    return C


class TestMarginal:

    def test_masses_must_sum_to_one(self):
        with pytest.raises(ValueError):
            copula.Marginal(copula.EMPIRICAL, np.array([0.0, 1.0, 2.0]), np.array([0.3, 0.3]))

    def test_edges_strictly_increasing(self):
        with pytest.raises(ValueError):
            copula.Marginal(copula.EMPIRICAL, np.array([0.0, 0.0, 2.0]), np.array([0.5, 0.5]))

    def test_uniform_marginal(self):
        marg = copula.uniform_marginal(4)
        assert marg.G == 4
        assert np.allclose(marg.masses, 0.25)
        assert not marg.is_normal

    def test_cumulative(self):
        marg = copula.empirical([0, 1, 2], [1, 3])
        assert np.allclose(marg.cumulative(), [0.0, 0.25, 1.0])


class TestInverseCdf:

    def test_normal_median(self):
        assert copula.inverse_cdf(copula.standard_normal(), 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_normal_upper_quantile(self):
        assert copula.inverse_cdf(copula.standard_normal(), 0.975) == pytest.approx(1.959963984540054, abs=1e-9)

    def test_uniform_is_identity(self):
        marg = copula.uniform_marginal(4)
        assert copula.inverse_cdf(marg, 0.625) == pytest.approx(0.625)

    def test_vectorized(self):
        marg = copula.uniform_marginal(10, lo=-1.0, hi=1.0)
        out = copula.inverse_cdf(marg, np.array([0.1, 0.5, 0.9]))
        assert np.allclose(out, [-0.8, 0.0, 0.8])

    @pytest.mark.parametrize('u', [0.0, 1.0, -0.2, 1.5])
    def test_domain(self, u):
        with pytest.raises(DomainError):
            copula.inverse_cdf(copula.standard_normal(), u)
        with pytest.raises(DomainError):
            copula.inverse_cdf(copula.uniform_marginal(4), u)


class TestFitMarginal:

    def test_uniform_masses(self, rng):
        marg = copula.fit_marginal(rng.uniform(size=100000), 100)
        assert marg.G == 100
        assert np.all(np.abs(marg.masses - 0.01) < 0.005)

    def test_normal_median(self, rng):
        marg = copula.fit_marginal(rng.standard_normal(100000), 100)
        assert copula.inverse_cdf(marg, 0.5) == pytest.approx(0.0, abs=0.05)

    def test_dominant_bin(self, rng):
        samples = np.concatenate([np.zeros(999), [1e-6]])
        marg = copula.fit_marginal(samples, 10)
        assert marg.masses.max() > 0.99

    def test_degenerate_support(self):
        with pytest.raises(DegenerateSupport):
            copula.fit_marginal(np.ones(50), 10)

    def test_discretized_normal_keeps_shape(self):
        marg = copula.discretize_marginal(copula.standard_normal(), 100)
        assert marg.G == 100
        assert copula.marginal_mean(marg) == pytest.approx(0.0, abs=1e-9)
        assert copula.marginal_support(marg) == (-4.0, 4.0)

    def test_tertiles_of_uniform(self):
        lo, hi = copula.marginal_tertiles(copula.uniform_marginal(3))
        assert lo == pytest.approx(1 / 3)
        assert hi == pytest.approx(2 / 3)

    @pytest.mark.slow
    def test_sample_marginal_matches_cdf(self, rng):
        marg = copula.fit_marginal(rng.gamma(2.0, size=20000), 50)
        draws = copula.sample_marginal(marg, 100000, rng)
        assert stats.kstest(draws, lambda x: copula.cdf(marg, x)).statistic < 0.01


class TestSampleCopula:

    def test_independence(self, rng, normal3):
        data = copula.sample_copula(np.eye(3), normal3, 100000, rng)
        C = copula.empirical_corr(data)
        assert np.all(np.abs(C[np.triu_indices(3, 1)]) < 0.02)

    def test_normal_marginals_reproduce_parameter(self, rng, normal3):
        data = copula.sample_copula(pair_matrix(0.7), normal3, 100000, rng)
        assert copula.empirical_corr(data)[0, 1] == pytest.approx(0.7, abs=0.01)

    def test_uniform_marginals_attenuate(self, rng):
        marginals = [copula.uniform_marginal(100), copula.uniform_marginal(100), copula.standard_normal()]
        data = copula.sample_copula(pair_matrix(0.7), marginals, 100000, rng)
        assert copula.empirical_corr(data)[0, 1] < 0.7

    def test_labels_binary_and_balanced(self, rng, normal3):
        data = copula.sample_copula(pair_matrix(0.3), normal3, 20000, rng)
        assert set(np.unique(data.labels)) == {0, 1}
        assert data.labels.mean() == pytest.approx(0.5, abs=0.02)
        assert data.m == 20000
        assert data.n == 3

    def test_median_rule_on_empirical_output(self, rng):
        marginals = [copula.standard_normal(), copula.standard_normal(),
                     copula.fit_marginal(rng.exponential(size=5000), 50)]
        data = copula.sample_copula(np.eye(3), marginals, 10001, rng)
        assert data.labels.sum() == 5000

    def test_deterministic(self, normal3):
        a = copula.sample_copula(pair_matrix(0.4), normal3, 100, np.random.default_rng(3))
        b = copula.sample_copula(pair_matrix(0.4), normal3, 100, np.random.default_rng(3))
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.labels, b.labels)

    def test_invalid_matrix(self, rng, normal3):
        C = np.full((3, 3), -0.9)
        np.fill_diagonal(C, 1.0)
        with pytest.raises(InvalidMatrix):
            copula.sample_copula(C, normal3, 10, rng)

    def test_marginal_count(self, rng):
        with pytest.raises(ValueError):
            copula.sample_copula(np.eye(3), [copula.standard_normal()], 10, rng)

    @pytest.mark.slow
    def test_matches_parameter_within_tolerance(self, rng):
        C = corrmat.sample_corr_matrix(4, rng)
        marginals = [copula.standard_normal() for _ in range(4)]
        X = copula._copula_columns(C, marginals, 100000, rng)
        assert np.max(np.abs(copula.empirical_corr(X) - C)) < 0.015


class TestEmpiricalCorr:

    def test_identical_columns(self, rng):
        x = rng.standard_normal(50)
        assert copula.empirical_corr(np.column_stack([x, x]))[0, 1] == pytest.approx(1.0)

    def test_negated_column(self, rng):
        x = rng.standard_normal(50)
        assert copula.empirical_corr(np.column_stack([x, -x]))[0, 1] == pytest.approx(-1.0)

    def test_zero_variance_names_column(self, rng):
        data = copula.Dataset(
            np.column_stack([rng.standard_normal(20), np.ones(20)]),
            rng.integers(0, 2, 20),
            names=['age', 'height', 'label'],
        )
        with pytest.raises(ZeroVariance) as excinfo:
            copula.empirical_corr(data)
        assert excinfo.value.column == 'height'

    def test_too_few_records(self):
        with pytest.raises(ValueError):
            copula.empirical_corr(np.ones((2, 2)))

    def test_output_correlations_length(self, copula_data):
        _, _, train, _ = copula_data
        V = copula.output_correlations(train)
        assert V.shape == (2,)
        assert V[0] > 0.5


class TestResolveThreshold:

    def test_auto(self):
        values = np.array([1.0, 2.0, 10.0])
        assert copula.resolve_threshold('auto', values, copula.standard_normal()) == 0.0
        assert copula.resolve_threshold('auto', values, copula.uniform_marginal(2)) == 2.0

    def test_mean_and_float(self):
        values = np.array([1.0, 2.0, 6.0])
        assert copula.resolve_threshold('mean', values, copula.standard_normal()) == 3.0
        assert copula.resolve_threshold(1.5, values, copula.standard_normal()) == 1.5

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            copula.resolve_threshold('mode', np.ones(3), copula.standard_normal())


class TestShiftConstraints:

    def test_normal_marginals_need_no_shift(self, rng, normal3):
        result = copula.shift_constraints([0.5, 0.5], normal3, rng, S=100, N_D=1000, binarize_label=False)
        assert result.converged
        assert result.iterations == 1
        assert np.array_equal(result.shifted, [0.5, 0.5])

    def test_uniform_marginals_shift_upwards(self, rng):
        marginals = [copula.uniform_marginal(100), copula.uniform_marginal(100)]
        result = copula.shift_constraints([0.7], marginals, rng, S=50, N_D=1000, M=3)
        assert result.shifted[0] > 0.7

    def test_history_monotone_and_bounded(self, rng):
        marginals = [copula.uniform_marginal(20) for _ in range(3)]
        result = copula.shift_constraints([0.9, -0.9], marginals, rng, S=20, N_D=500, M=4)
        assert np.all(np.diff(result.history) <= 0)
        assert np.all(np.abs(result.shifted) <= 1.0)
        assert result.gap == result.history[-1]

    def test_worker_count_does_not_matter(self, normal3):
        a = copula.shift_constraints([0.3, 0.2], normal3, np.random.default_rng(1), S=10, N_D=200, M=2)
        b = copula.shift_constraints([0.3, 0.2], normal3, np.random.default_rng(1), S=10, N_D=200, M=2,
                                     n_jobs=2)
        assert np.array_equal(a.shifted, b.shifted)
        assert a.history == b.history

    def test_rejects_s3(self, rng, normal3):
        with pytest.raises(ValueError):
            copula.shift_constraints([0.1, 0.1], normal3, rng, kind='S3')

    @pytest.mark.slow
    def test_uniform_n4_converges(self, rng):
        marginals = [copula.uniform_marginal(100) for _ in range(4)]
        result = copula.shift_constraints([0.3, 0.3, 0.3], marginals, rng, S=100, N_D=1000, M=10)
        assert result.gap < 0.01
        assert result.iterations <= 10
