"""Tests for the model-less attack, the shadow-model pipeline and constraint extraction."""

import dataclasses
import json

import numpy as np
import pytest
from scipy import stats
from scipy.special import logit

from modules import attacks, copula, corrmat, models
from modules.errors import DegenerateLabels, OutOfRange, ShapeMismatch, UnsupportedB


@pytest.fixture
def pair_target(rng):
    """LR target on copula data with rho(X_1, X_2) = 0.8 and constraints (0.6, 0.6)"""
    C = np.array([
        [1.0, 0.8, 0.6],
        [0.8, 1.0, 0.6],
        [0.6, 0.6, 1.0],
    ])
    marginals = [copula.standard_normal() for _ in range(3)]
    data = copula.sample_copula(C, marginals, 1000, rng)
    model = models.train_lr(data)
    scenario = corrmat.Scenario.s2([0.6, 0.6])
    return data, marginals, model, scenario


def constant_lr(p1, n_inputs=2):
    return models.LogisticRegressionModel(np.zeros(n_inputs), float(logit(p1)))


class TestBins:

    def test_positive(self):
        assert attacks.bin_of(0.5, 3) == 3

    def test_left_closed(self):
        assert attacks.bin_of(-1 / 3, 3) == 2

    def test_five_bins(self):
        assert attacks.bin_of(-0.9, 5) == 1

    def test_endpoints(self):
        assert attacks.bin_of(1.0, 3) == 3
        assert attacks.bin_of(-1.0, 3) == 1

    def test_vectorized(self):
        assert list(attacks.bin_of(np.array([-0.5, 0.0, 0.5]), 3)) == [1, 2, 3]

    def test_shadow_label_example(self):
        assert attacks.bin_of(-0.5, 3) == 1

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            attacks.bin_of(1.1, 3)

    def test_edges(self):
        assert np.allclose(attacks.bin_edges(4), [-0.5, 0.0, 0.5])


class TestIntervals:

    def test_unconstrained(self):
        iv = attacks.closed_form_interval(0.0, 0.0)
        assert iv.lo == pytest.approx(-1.0)
        assert iv.hi == pytest.approx(1.0)

    def test_collapsed(self):
        iv = attacks.closed_form_interval(1.0, 0.3)
        assert iv.lo == pytest.approx(0.3)
        assert iv.hi == pytest.approx(0.3)

    def test_half_half(self):
        iv = attacks.closed_form_interval(0.5, 0.5)
        assert iv.lo == pytest.approx(-0.5)
        assert iv.hi == pytest.approx(1.0)

    def test_empirical_s1_converges(self, rng):
        iv = attacks.empirical_interval(corrmat.Scenario.s1(3, 0.5, 0.5), 5000, rng)
        assert -0.5 - 1e-9 <= iv.lo <= -0.48
        assert 0.98 <= iv.hi <= 1.0 + 1e-9

    def test_empirical_s3_independent(self, rng):
        iv = attacks.empirical_interval(corrmat.Scenario.s3(np.eye(4)), 5000, rng)
        assert iv.lo == pytest.approx(-1.0, abs=0.02)
        assert iv.hi == pytest.approx(1.0, abs=0.02)

    def test_strong_constraints_inside_positive_bin(self):
        iv = attacks.exact_interval(corrmat.Scenario.s2([0.95, 0.9]))
        assert iv.lo == pytest.approx(0.719, abs=1e-3)
        assert attacks.model_less_case(iv, 3) == ('C1', 3)

    def test_empirical_inside_closed_form(self, rng):
        for _ in range(5):
            rho1, rho2 = rng.uniform(-1, 1, 2)
            exact = attacks.closed_form_interval(rho1, rho2)
            iv = attacks.empirical_interval(corrmat.Scenario.s1(3, rho1, rho2), 500, rng)
            assert exact.lo - 1e-9 <= iv.lo and iv.hi <= exact.hi + 1e-9

    def test_exact_interval_s3(self, rng):
        C = corrmat.sample_corr_matrix(4, rng)
        iv = attacks.exact_interval(corrmat.Scenario.s3(C))
        assert iv.lo <= C[0, 1] <= iv.hi

    def test_pair_interval_other_pair(self, rng):
        C = corrmat.sample_corr_matrix(5, rng)
        iv = attacks.pair_interval(corrmat.Scenario.s3(C), (1, 3))
        assert iv.lo <= C[1, 3] <= iv.hi
        s2 = corrmat.Scenario.s2([0.1, 0.6, 0.2, 0.6])
        assert attacks.pair_interval(s2, (1, 3)) == attacks.closed_form_interval(0.6, 0.6)
        with pytest.raises(ValueError):
            attacks.pair_interval(corrmat.Scenario.s1(5, 0.3, 0.3), (1, 3))

    def test_invalid_interval(self):
        with pytest.raises(ValueError):
            attacks.Interval(0.5, 0.2)


class TestModelLess:

    def test_c1(self, rng):
        assert attacks.model_less_predict(attacks.Interval(0.719, 1.0), 3, rng) == 3

    def test_c2_majority(self, rng):
        iv = attacks.Interval(-0.40, 0.20)
        assert attacks.model_less_case(iv, 3) == ('C2', 2)
        assert attacks.model_less_predict(iv, 3, rng) == 2

    def test_c2_tie_goes_to_lower_bin(self):
        assert attacks.model_less_case(attacks.Interval(0.0, 2 / 3), 3) == ('C2', 2)

    def test_point_interval(self):
        assert attacks.model_less_case(attacks.Interval(0.5, 0.5), 3) == ('C1', 3)

    def test_c3_uniform(self, rng):
        guesses = [attacks.model_less_predict(attacks.Interval(-1.0, 1.0), 3, rng) for _ in range(10000)]
        counts = np.bincount(guesses, minlength=4)[1:]
        assert stats.chisquare(counts).pvalue > 0.01

    def test_c3_only_fully_covered_bins(self, rng):
        iv = attacks.Interval(-0.5, 1.0)
        assert attacks.model_less_case(iv, 3) == ('C3', None)
        assert list(attacks.covered_bins(iv, 3)) == [2, 3]
        guesses = [attacks.model_less_predict(iv, 3, rng) for _ in range(4000)]
        assert set(guesses) == {2, 3}
        assert np.mean(np.array(guesses) == 3) == pytest.approx(0.5, abs=0.03)

    def test_c3_single_covered_bin(self, rng):
        iv = attacks.Interval(-0.4, 0.35)
        assert [attacks.model_less_predict(iv, 3, rng) for _ in range(50)] == [2] * 50

    def test_vectorized_c3_stays_in_covered_bins(self, rng):
        lo = np.full(4000, -0.5)
        hi = np.ones(4000)
        many = attacks.model_less_predict_many(lo, hi, 3, rng)
        assert set(many) == {2, 3}
        assert np.mean(many == 3) == pytest.approx(0.5, abs=0.03)
        everywhere = attacks.model_less_predict_many(np.full(6000, -1.0), np.ones(6000), 3, rng)
        assert stats.chisquare(np.bincount(everywhere, minlength=4)[1:]).pvalue > 0.01

    def test_vectorized_matches_scalar(self, rng):
        lo = rng.uniform(-1, 0.5, 500)
        hi = np.minimum(1.0, lo + rng.uniform(0, 0.6, 500))
        many = attacks.model_less_predict_many(lo, hi, 3, rng)
        for a, b, guess in zip(lo, hi, many):
            iv = attacks.Interval(a, b)
            case, expected = attacks.model_less_case(iv, 3)
            if case == 'C3':
                assert guess in attacks.covered_bins(iv, 3)
            else:
                assert guess == expected


class TestCertainRegion:

    def test_positive(self):
        assert attacks.certain_region(0.95, 0.95) == 3

    def test_negative(self):
        assert attacks.certain_region(0.95, -0.95) == 1

    def test_low(self):
        assert attacks.certain_region(0.98, 0.05) == 2

    def test_uncertain_center(self):
        assert attacks.certain_region(0.0, 0.0) is None

    def test_only_three_bins(self):
        with pytest.raises(UnsupportedB):
            attacks.certain_region(0.5, 0.5, B=5)

    def test_agrees_with_model_less(self, rng):
        for rho1, rho2 in rng.uniform(-1, 1, size=(10000, 2)):
            forced = attacks.certain_region(rho1, rho2)
            if forced is not None:
                case, guess = attacks.model_less_case(attacks.closed_form_interval(rho1, rho2), 3)
                assert (case, guess) == ('C1', forced)

    def test_forced_bin_is_true_bin(self, rng):
        fired = 0
        for rho1, rho2 in rng.uniform(-1, 1, size=(2000, 2)):
            forced = attacks.certain_region(rho1, rho2)
            if forced is None:
                continue
            fired += 1
            assert attacks.bin_of(corrmat.sample_s1(3, rho1, rho2, rng)[0, 1], 3) == forced
        assert fired > 0


class TestFeatures:

    def test_parse_precision(self):
        assert attacks.parse_precision('full') == ('full', None)
        assert attacks.parse_precision('label_only') == ('label_only', None)
        assert attacks.parse_precision('rounded(2)') == ('rounded', 2)
        assert attacks.parse_precision(3) == ('rounded', 3)
        with pytest.raises(ValueError):
            attacks.parse_precision('rounded')

    def test_zero_weight_scores(self, rng):
        query = rng.standard_normal((100, 2))
        assert np.allclose(attacks.extract_features(constant_lr(0.5), query), 0.5)

    def test_label_only_tie_goes_to_one(self, rng):
        query = rng.standard_normal((10, 2))
        assert np.array_equal(attacks.confidence_scores(constant_lr(0.5), query, 'label_only'), np.ones(10))

    def test_rounding_truncates(self, rng):
        scores = attacks.confidence_scores(constant_lr(0.7342), rng.standard_normal((5, 2)), 'rounded(1)')
        assert np.allclose(scores, 0.7)

    @pytest.mark.parametrize('p1', [0.29, 0.57])
    def test_rounding_keeps_exact_decimals(self, rng, p1):
        scores = attacks.confidence_scores(constant_lr(p1), rng.standard_normal((5, 2)), 'rounded(2)')
        assert np.all(scores == p1)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            attacks.extract_features(constant_lr(0.5), rng.standard_normal((10, 3)))

    def test_white_box_features(self, rng):
        mlp = models.init_mlp(2, rng)
        query = rng.standard_normal((7, 2))
        assert attacks.extract_features(mlp, query, feature_kind='weights').size == 292
        assert attacks.extract_features(mlp, query, feature_kind='combined').size == 299


class TestMetaClassifier:

    def test_degenerate_labels(self, rng):
        meta = attacks.MetaDataset(rng.uniform(size=(20, 5)), np.full(20, 3))
        with pytest.raises(DegenerateLabels):
            attacks.train_meta_classifier(meta, 3)

    @pytest.mark.parametrize('kind', ['lr', 'mlp'])
    def test_learns_separable_bins(self, rng, kind):
        labels = rng.integers(1, 4, 600)
        features = labels[:, None] + 0.1 * rng.standard_normal((600, 4))
        clf = attacks.train_meta_classifier(attacks.MetaDataset(features, labels), 3, kind=kind)
        assert np.mean(attacks.predict_bin(clf, features) == labels) > 0.8
        assert attacks.predict_bin(clf, features[0]) in (1, 2, 3)

    def test_cross_validation_covers_every_row(self, rng):
        labels = rng.integers(1, 4, 100)
        features = labels[:, None] + 0.1 * rng.standard_normal((100, 3))
        predicted = attacks.cross_validate_meta(features, labels, 3, folds=5)
        assert predicted.shape == (100,)
        assert np.mean(predicted == labels) > 0.9


class TestShadowPipeline:

    def test_ensemble_independent_of_workers(self, pair_target):
        _, marginals, _, scenario = pair_target
        a = attacks.build_shadow_ensemble(scenario, marginals, 200, 6, 'lr', models.TrainConfig(),
                                          np.random.default_rng(5))
        b = attacks.build_shadow_ensemble(scenario, marginals, 200, 6, 'lr', models.TrainConfig(),
                                          np.random.default_rng(5), n_jobs=2)
        assert np.array_equal(a.correlations, b.correlations)
        assert all(np.array_equal(x.weights, y.weights) for x, y in zip(a.models, b.models))

    def test_meta_rows_follow_shadow_order(self, pair_target, rng):
        _, marginals, _, scenario = pair_target
        ensemble = attacks.build_shadow_ensemble(scenario, marginals, 200, 8, 'lr', models.TrainConfig(), rng)
        query = attacks.build_query_dataset(scenario, marginals, 50, rng)
        order = rng.permutation(8)
        shuffled = attacks.ShadowEnsemble([ensemble.models[k] for k in order], ensemble.correlations[order])
        meta = attacks.meta_dataset(ensemble, query, 3)
        meta_shuffled = attacks.meta_dataset(shuffled, query, 3)
        assert np.array_equal(meta_shuffled.features, meta.features[order])
        assert np.array_equal(meta_shuffled.labels, meta.labels[order])
        assert np.all((meta.features >= 0) & (meta.features <= 1))

    def test_smoke_run(self, pair_target):
        data, marginals, model, scenario = pair_target
        params = attacks.AttackParams(K=50, Q=100, m=data.m)
        result = attacks.run_model_based_attack(model, scenario, marginals, params, np.random.default_rng(0))
        assert result.predicted_bin in (1, 2, 3)
        assert sum(result.label_counts.values()) == 50
        assert result.shifted is None
        report = result.to_dict()
        assert set(report) >= {'scenario', 'params', 'predicted_bin', 'meta_holdout_acc', 'interval'}
        assert 'true_bin' not in report
        assert report['scenario'] == {'kind': 'S2', 'n': 3, 'values': [0.6, 0.6]}
        assert report['params']['K'] == 50

    def test_attack_report_file(self, pair_target, tmp_path):
        data, marginals, model, scenario = pair_target
        params = attacks.AttackParams(K=50, Q=20, m=data.m)
        result = attacks.run_model_based_attack(model, scenario, marginals, params, np.random.default_rng(3))
        path = attacks.write_attack_report(result, tmp_path / 'attack.json', true_bin=3)
        report = json.loads(path.read_text())
        assert report['true_bin'] == 3
        assert report['predicted_bin'] == result.predicted_bin
        assert report['meta_holdout_acc'] == pytest.approx(result.meta_holdout_accuracy, nan_ok=True)
        expected = attacks.closed_form_interval(0.6, 0.6)
        assert report['interval'] == pytest.approx([expected.lo, expected.hi])
        assert report['params']['train_cfg'] == dataclasses.asdict(models.TrainConfig())

    def test_reproducible(self, pair_target):
        data, marginals, model, scenario = pair_target
        params = attacks.AttackParams(K=30, Q=20, m=300)
        a = attacks.run_model_based_attack(model, scenario, marginals, params, np.random.default_rng(11))
        b = attacks.run_model_based_attack(model, scenario, marginals, params, np.random.default_rng(11))
        assert a.predicted_bin == b.predicted_bin
        assert np.array_equal(a.ensemble.correlations, b.ensemble.correlations)

    def test_sub_float_rounding_is_a_no_op(self, pair_target, rng):
        _, marginals, model, scenario = pair_target
        ensemble = attacks.build_shadow_ensemble(scenario, marginals, 300, 40, 'lr', models.TrainConfig(), rng)
        query = attacks.build_query_dataset(scenario, marginals, 50, rng)
        full, _ = attacks.attack_with_ensemble(model, ensemble, query, 3, 'full')
        rounded, _ = attacks.attack_with_ensemble(model, ensemble, query, 3, 'rounded(15)')
        assert full == rounded

    def test_shift_for_non_normal_marginals(self, rng):
        marginals = [copula.uniform_marginal(20) for _ in range(3)]
        params = attacks.AttackParams(shift_S=10, shift_M=2)
        shifted, result = attacks.shift_scenario(corrmat.Scenario.s2([0.5, 0.4]), marginals, 300, params, rng)
        assert result is not None
        assert shifted.kind == 'S2'
        assert np.all(np.abs(shifted.values) <= 1.0)

    def test_no_shift_for_s3(self, rng):
        marginals = [copula.uniform_marginal(20) for _ in range(3)]
        scenario = corrmat.Scenario.s3(np.eye(3))
        shifted, result = attacks.shift_scenario(scenario, marginals, 300, attacks.AttackParams(), rng)
        assert shifted is scenario
        assert result is None

    def test_meta_kind_pairing(self):
        assert attacks.AttackParams(model_kind='mlp').resolved_meta_kind() == 'mlp'
        assert attacks.AttackParams(model_kind='lr').resolved_meta_kind() == 'lr'

    @pytest.mark.slow
    def test_strong_pair_predicted_positive(self, pair_target):
        data, marginals, model, scenario = pair_target
        params = attacks.AttackParams(K=1000, Q=100, m=data.m)
        result = attacks.run_model_based_attack(model, scenario, marginals, params, np.random.default_rng(1))
        assert result.predicted_bin == 3


class TestExtractConstraints:

    def test_constant_model_is_degenerate(self, rng):
        result = attacks.extract_constraints(constant_lr(0.5), [copula.standard_normal()] * 3, 100, rng)
        assert result.degenerate
        assert np.array_equal(result.estimates, np.zeros(2))

    def test_single_informative_weight(self, rng):
        model = models.LogisticRegressionModel(np.array([5.0, 0.0, 0.0]), 0.0)
        result = attacks.extract_constraints(model, [copula.standard_normal()] * 4, 1000, rng)
        assert not result.degenerate
        assert result.estimates[0] > 0.6
        assert np.all(np.abs(result.estimates[1:]) < 0.15)

    def test_needs_ten_records(self, rng):
        with pytest.raises(ValueError):
            attacks.extract_constraints(constant_lr(0.5), [copula.standard_normal()] * 3, 5, rng)

    @pytest.mark.slow
    def test_mse_on_copula_targets(self, rng):
        marginals = [copula.standard_normal() for _ in range(3)]
        errors = []
        for _ in range(100):
            C = corrmat.sample_corr_matrix(3, rng)
            data = copula.sample_copula(C, marginals, 1000, rng)
            model = models.train_lr(data)
            estimate = attacks.extract_constraints(model, marginals, 100, rng).estimates
            errors.append(np.mean((estimate - copula.output_correlations(data)) ** 2))
        assert np.mean(errors) < 0.1
