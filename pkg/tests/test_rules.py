import math

import numpy as np
import pytest

from confset.core import ConfidenceSet, LabeledDataset, UnlabeledDataset
from confset.distgen import MixtureSpec, PathologySpec, sample_mixture_spec
from confset.gfun import mc_true_threshold
from confset.metrics import error_rate, information
from confset.probest import OraclePosterior, fit_knn, fit_softmax
from confset.rules import (
    THRESHOLD,
    TOP_BETA,
    ConfidenceRule,
    FitConfig,
    fit_oracle,
    fit_plugin,
    fit_semi_supervised,
    fit_supervised,
    fit_top_beta,
    predict_set,
    split_halves,
)


class FixedScores:
    """Returns the same score vector at every point."""

    kind = "fixed"

    def __init__(self, scores, dim=1):
        self.scores = np.asarray(scores, dtype=float)
        self.k_classes = self.scores.size
        self.dim = dim

    def predict(self, x):
        X = np.atleast_2d(x)
        return np.tile(self.scores, (X.shape[0], 1))

    def to_dict(self):
        return {"kind": self.kind, "scores": self.scores.tolist()}


@pytest.fixture(scope="module")
def mix():
    return sample_mixture_spec(10, 10, 0)


@pytest.fixture(scope="module")
def train(mix):
    return mix.sample_labeled(400, 1)


class TestTopBeta:
    def test_clear_ordering(self):
        rule = fit_top_beta(FixedScores([0.5, 0.3, 0.2]), 2)
        assert predict_set(rule, np.zeros(1)).members == (1, 2)

    def test_full_set(self):
        rule = fit_top_beta(FixedScores([0.5, 0.3, 0.2]), 3)
        assert predict_set(rule, np.zeros(1)).members == (1, 2, 3)

    def test_tie_goes_to_lowest_index(self):
        rule = fit_top_beta(FixedScores([0.4, 0.4, 0.2]), 1)
        assert predict_set(rule, np.zeros(1)).members == (1,)
        rule = fit_top_beta(FixedScores([0.2, 0.4, 0.4, 0.4]), 2)
        assert predict_set(rule, np.zeros(1)).members == (2, 3)

    @pytest.mark.parametrize("beta", [0, 4])
    def test_beta_out_of_range(self, beta):
        with pytest.raises(ValueError):
            fit_top_beta(FixedScores([0.5, 0.3, 0.2]), beta)

    def test_cardinality_is_beta_everywhere(self, mix, train, rng):
        X = rng.uniform(-2, 6, size=(500, 10))
        for model in (OraclePosterior(mix), fit_knn(train, k_classes=10), fit_softmax(train, iters=100, k_classes=10)):
            for beta in (1, 3, 10):
                assert np.all(fit_top_beta(model, beta).predict_mask(X).sum(axis=1) == beta)


class TestPredictSet:
    def test_threshold_zero_gives_full_set(self):
        rule = ConfidenceRule(THRESHOLD, FixedScores([0.0, 0.3, 0.7]), beta=1, threshold=0.0)
        assert predict_set(rule, np.zeros(1)).cardinality == 3

    def test_threshold_above_every_score_gives_empty(self):
        rule = ConfidenceRule(THRESHOLD, FixedScores([0.1, 0.3, 0.6]), beta=1, threshold=0.61)
        assert predict_set(rule, np.zeros(1)) == ConfidenceSet(3, 0)

    def test_inclusive_membership(self):
        rule = ConfidenceRule(THRESHOLD, FixedScores([0.30, 0.50, 0.20]), beta=1, threshold=0.30)
        assert predict_set(rule, np.zeros(1)).members == (1, 2)

    def test_dimension_mismatch(self):
        rule = ConfidenceRule(THRESHOLD, FixedScores([0.3, 0.7], dim=2), beta=1, threshold=0.5)
        with pytest.raises(ValueError):
            predict_set(rule, np.zeros(3))
        with pytest.raises(ValueError):
            predict_set(rule, np.zeros((2, 2)))

    def test_invalid_rules(self):
        model = FixedScores([0.3, 0.7])
        with pytest.raises(ValueError):
            ConfidenceRule(THRESHOLD, model, beta=1, threshold=1.5)
        with pytest.raises(ValueError):
            ConfidenceRule(TOP_BETA, model, beta=1, threshold=0.2)
        with pytest.raises(ValueError):
            ConfidenceRule("other", model, beta=1)
        with pytest.raises(ValueError):
            ConfidenceRule(THRESHOLD, model, beta=1, threshold=0.2, noise_std=-1.0)


class TestSupervised:
    def test_huge_held_out_half_matches_population_threshold(self, mix):
        # std e^-10 keeps the perturbation far below the tolerance; see the next test for e^-5
        cfg = FitConfig(beta=2, k_classes=10, estimator="oracle", dist=mix, noise_std=math.exp(-10))
        rule = fit_supervised(mix.sample_labeled(400_000, 3), cfg)
        assert abs(rule.threshold - mc_true_threshold(mix, 2, 1_000_000, seed=1)) <= 0.01

    def test_default_noise_moves_threshold_by_at_most_the_perturbation(self, mix):
        cfg = FitConfig(beta=2, k_classes=10, estimator="oracle", dist=mix)
        train = mix.sample_labeled(400_000, 3)
        rule = fit_supervised(train, cfg)
        held = split_halves(train)[1].features
        gap = np.max(rule.scores(held) - OraclePosterior(mix).predict(held))
        assert abs(rule.threshold - mc_true_threshold(mix, 2, 1_000_000, seed=1)) <= gap + 0.01

    def test_two_rows(self):
        spec = MixtureSpec(np.array([[0.0], [2.0]]))
        data = LabeledDataset(np.array([[0.3], [1.4]]), np.array([1, 2]))
        cfg = FitConfig(beta=1, k_classes=2, estimator="oracle", dist=spec, seed=5)
        rule = fit_supervised(data, cfg)
        held_scores = rule.scores(data.features[1:])[0]
        assert rule.threshold in held_scores
        # one pooled point and beta=1: the second largest of its two scores
        assert rule.threshold == held_scores.min()

    def test_deterministic_serialization(self, train):
        cfg = FitConfig(beta=2, k_classes=10, estimator="softmax", iters=100, seed=3)
        assert fit_supervised(train, cfg).to_json() == fit_supervised(train, cfg).to_json()

    def test_split_by_row_order(self, train):
        a, b = split_halves(train)
        assert a.n == 200 and b.n == 200
        np.testing.assert_array_equal(b.features[0], train.features[200])
        odd = LabeledDataset(train.features[:5], train.labels[:5])
        a, b = split_halves(odd)
        assert (a.n, b.n) == (2, 3)

    def test_needs_two_rows(self, train):
        with pytest.raises(ValueError):
            fit_supervised(train.head(1), FitConfig(beta=2, k_classes=10, iters=5))

    def test_beta_range(self, train):
        with pytest.raises(ValueError):
            FitConfig(beta=0, k_classes=10)
        with pytest.raises(ValueError):
            fit_supervised(train, FitConfig(beta=10, k_classes=10, iters=5))

    def test_unaffected_by_unlabeled_sets(self, mix, train):
        # a supervised fit never reads D_N; run it next to two different pools
        cfg = FitConfig(beta=2, k_classes=10, estimator="knn", seed=4)
        outputs = []
        for pool_seed in (10, 11):
            pool = mix.sample_unlabeled(3000, pool_seed)
            fit_semi_supervised(train, pool, cfg)
            outputs.append(fit_supervised(train, cfg).to_json().encode())
        assert outputs[0] == outputs[1]


class TestSemiSupervised:
    def test_empty_pool_equals_supervised(self, train):
        cfg = FitConfig(beta=2, k_classes=10, estimator="softmax", iters=100, seed=9)
        empty = UnlabeledDataset.empty(10)
        assert fit_semi_supervised(train, empty, cfg).to_json() == fit_supervised(train, cfg).to_json()

    def test_sensitive_to_the_pool(self, mix, train):
        cfg = FitConfig(beta=2, k_classes=10, estimator="oracle", dist=mix, seed=1)
        typical = mix.sample_unlabeled(2000, 1)
        # every point sits exactly on mean 1, where one class dominates
        shifted = UnlabeledDataset(np.tile(mix.means[0], (2000, 1)))
        a = fit_semi_supervised(train, typical, cfg)
        b = fit_semi_supervised(train, shifted, cfg)
        assert a.threshold != b.threshold

    def test_dimension_mismatch(self, train):
        cfg = FitConfig(beta=2, k_classes=10, iters=5)
        with pytest.raises(ValueError):
            fit_semi_supervised(train, UnlabeledDataset(np.zeros((3, 4))), cfg)

    def test_oracle_model_information(self, mix):
        cfg = FitConfig(beta=2, k_classes=10, estimator="oracle", dist=mix)
        rule = fit_semi_supervised(mix.sample_labeled(1000, 0), mix.sample_unlabeled(10_000, 0), cfg)
        assert abs(information(rule, mix.sample_unlabeled(100_000, 99)) - 2.0) <= 0.03

    def test_large_pool_matches_population_threshold(self, mix):
        cfg = FitConfig(beta=2, k_classes=10, estimator="oracle", dist=mix, noise_std=math.exp(-10))
        rule = fit_semi_supervised(mix.sample_labeled(1000, 0), mix.sample_unlabeled(1_000_000, 7), cfg)
        assert abs(rule.threshold - mc_true_threshold(mix, 2, 1_000_000, seed=1)) <= 0.005


class TestNesting:
    def test_threshold_and_sets_monotone_in_beta(self, mix, train, rng):
        model = fit_softmax(train, iters=200, k_classes=10)
        pool = mix.sample_unlabeled(1000, 2).features
        X = rng.uniform(-1, 5, size=(300, 10))
        rules = [fit_plugin(model, pool, b, math.exp(-5), seed=2) for b in range(1, 10)]
        thresholds = [r.threshold for r in rules]
        assert all(a >= b for a, b in zip(thresholds, thresholds[1:]))
        masks = [r.predict_mask(X) for r in rules]
        for small, big in zip(masks, masks[1:]):
            assert np.all(big | ~small)


@pytest.fixture(scope="module")
def patho_rule():
    return fit_oracle(PathologySpec(beta=2, k_classes=10), 2, 200_000, seed=0)


class TestOracle:
    def test_inner_ball(self, patho_rule):
        assert predict_set(patho_rule, np.array([0.05, 0.0])).members == (1, 2, 3)

    def test_middle_annulus(self, patho_rule):
        assert predict_set(patho_rule, np.array([0.0, 1.3])).members == (1, 2, 3)

    def test_outer_annulus(self, patho_rule):
        assert predict_set(patho_rule, np.array([4.0, 0.0])).cardinality == 0

    def test_mixture_beta5_error(self, mix):
        rule = fit_oracle(mix, 5, 200_000, seed=0)
        assert error_rate(rule, mix.sample_labeled(20_000, 5)) <= 0.01

    def test_no_posterior(self):
        with pytest.raises(TypeError):
            fit_oracle(object(), 2, 1000)


class TestSerialization:
    def test_round_trip(self, mix, train, rng):
        X = rng.uniform(-1, 5, size=(100, 10))
        pool = mix.sample_unlabeled(500, 3).features
        models = [OraclePosterior(mix), fit_knn(train, k_classes=10), fit_softmax(train, iters=50, k_classes=10)]
        for model in models:
            for rule in (fit_top_beta(model, 3), fit_plugin(model, pool, 2, math.exp(-5), seed=8)):
                back = ConfidenceRule.from_json(rule.to_json())
                assert back.to_json() == rule.to_json()
                assert back.digest() == rule.digest()
                np.testing.assert_array_equal(back.predict_mask(X), rule.predict_mask(X))

    def test_prediction_perturbation_is_keyed(self, mix, rng):
        rule = fit_plugin(OraclePosterior(mix), mix.sample_unlabeled(200, 1).features, 2, math.exp(-5), seed=1)
        X = rng.uniform(-1, 5, size=(50, 10))
        np.testing.assert_array_equal(rule.scores(X), rule.scores(X))
        # the posterior itself may differ by an ulp between batch sizes; the noise may not
        np.testing.assert_allclose(rule.scores(X[:7])[3], rule.scores(X[3])[0], rtol=0, atol=1e-14)
        exact = OraclePosterior(mix).predict(X)
        assert np.all(rule.scores(X) >= exact) and np.max(rule.scores(X) - exact) < 0.1
