import json
import math

import numpy as np
import pytest

from _oracles import finite_difference_gradient
from confset.core import LabeledDataset
from confset.distgen import MixtureSpec, sample_mixture_spec
from confset.probest import (
    OraclePosterior,
    _design,
    fit_knn,
    fit_softmax,
    mixture_posterior,
    model_from_dict,
    softmax_loss_grad,
)


def brute_knn(train_x, train_y, k_classes, k, q):
    """Enumerate (distance, index) pairs and count labels of the k smallest."""
    pairs = sorted((float(np.sum((row - q) ** 2)), i) for i, row in enumerate(train_x))
    p = np.zeros(k_classes)
    for _, i in pairs[:k]:
        p[train_y[i] - 1] += 1
    return p / k


class TestMixturePosterior:
    def test_equal_means(self):
        spec = MixtureSpec(np.array([[1.0, 2.0], [1.0, 2.0]]))
        np.testing.assert_allclose(mixture_posterior(np.array([5.0, -3.0]), spec), [0.5, 0.5])

    def test_midpoint(self):
        spec = MixtureSpec(np.array([[0.0], [2.0]]))
        np.testing.assert_allclose(mixture_posterior(np.array([1.0]), spec), [0.5, 0.5])

    def test_hand_value(self):
        spec = MixtureSpec(np.array([[0.0], [2.0]]))
        e = math.exp(-2)
        np.testing.assert_allclose(mixture_posterior(np.array([0.0]), spec), [1 / (1 + e), e / (1 + e)], rtol=1e-12)

    def test_far_away_does_not_overflow(self):
        spec = MixtureSpec(np.array([[0.0], [2.0]]))
        p = mixture_posterior(np.array([1e4]), spec)
        np.testing.assert_array_equal(p, [0.0, 1.0])

    def test_rejects_non_finite(self):
        spec = MixtureSpec(np.array([[0.0], [2.0]]))
        with pytest.raises(ValueError):
            mixture_posterior(np.array([np.nan]), spec)

    def test_translation_invariance(self, rng):
        spec = sample_mixture_spec(5, 3, 4)
        shift = rng.normal(size=3) * 10
        moved = MixtureSpec(spec.means + shift)
        X = rng.normal(size=(200, 3)) * 3 + 2
        np.testing.assert_allclose(OraclePosterior(spec).predict(X), OraclePosterior(moved).predict(X + shift), atol=1e-12)


class TestKnn:
    def test_all_neighbors_give_frequencies(self, rng):
        y = rng.integers(1, 4, size=30)
        model = fit_knn(LabeledDataset(rng.normal(size=(30, 2)), y), 30, k_classes=3)
        freq = np.bincount(y - 1, minlength=3) / 30
        np.testing.assert_allclose(model.predict(rng.normal(size=(5, 2))), np.tile(freq, (5, 1)))

    def test_single_point(self):
        model = fit_knn(LabeledDataset(np.array([[0.3, 0.1]]), np.array([3])), 1, k_classes=5)
        np.testing.assert_array_equal(model.predict(np.array([9.0, -4.0])), [0, 0, 1, 0, 0])

    def test_line(self):
        train = LabeledDataset(np.array([[0.0], [1.0], [10.0], [11.0]]), np.array([1, 1, 2, 2]))
        np.testing.assert_array_equal(fit_knn(train, 2).predict(np.array([0.4])), [1.0, 0.0])

    def test_distance_ties_go_to_lower_index(self):
        # query 0.5 is equidistant from all four points
        train = LabeledDataset(np.array([[0.0], [1.0], [0.0], [1.0]]), np.array([2, 1, 1, 2]))
        model = fit_knn(train, 1, k_classes=2)
        assert model.neighbors(np.array([[0.5]]))[0, 0] == 0
        np.testing.assert_array_equal(model.predict(np.array([0.5])), [0.0, 1.0])

    def test_matches_brute_force(self, rng):
        x = np.round(rng.normal(size=(60, 2)), 1)  # ties are common
        y = rng.integers(1, 5, size=60)
        model = fit_knn(LabeledDataset(x, y), 7, k_classes=4)
        Q = np.round(rng.normal(size=(100, 2)), 1)
        got = model.predict(Q)
        for q, p in zip(Q, got):
            np.testing.assert_array_equal(p, brute_knn(x, y, 4, 7, q))

    def test_blocked_neighbors_agree(self, rng):
        model = fit_knn(LabeledDataset(rng.normal(size=(50, 3)), rng.integers(1, 3, size=50)), 5)
        Q = rng.normal(size=(40, 3))
        np.testing.assert_array_equal(model.neighbors(Q), model.neighbors(Q, block=200))

    def test_default_k(self, rng):
        model = fit_knn(LabeledDataset(rng.normal(size=(10, 1)), rng.integers(1, 3, size=10)))
        assert model.k_neighbors == 4

    @pytest.mark.parametrize("k", [0, 11])
    def test_k_out_of_range(self, rng, k):
        with pytest.raises(ValueError):
            fit_knn(LabeledDataset(rng.normal(size=(10, 1)), rng.integers(1, 3, size=10)), k)

    def test_constant_on_voronoi_cells(self, rng):
        x = rng.uniform(-5, 5, size=(15, 2))
        y = rng.integers(1, 4, size=15)
        model = fit_knn(LabeledDataset(x, y), 1, k_classes=3)
        for i in range(15):
            q = x[i] + rng.normal(size=(20, 2)) * 1e-3
            nearest = np.argmin(((q[:, None, :] - x[None]) ** 2).sum(-1), axis=1)
            inside = q[nearest == i]
            expected = np.eye(3)[y[i] - 1]
            np.testing.assert_array_equal(model.predict(inside), np.tile(expected, (len(inside), 1)))


class TestSoftmax:
    def test_separated_singletons(self):
        train = LabeledDataset(np.array([[-5.0], [5.0]]), np.array([1, 2]))
        model = fit_softmax(train, l2=0.01, iters=500, step=0.1)
        assert model.predict(np.array([-5.0]))[0] > 0.9

    def test_zero_iterations_uniform(self, rng):
        train = LabeledDataset(rng.normal(size=(20, 3)), rng.integers(1, 5, size=20))
        model = fit_softmax(train, iters=0, k_classes=4)
        np.testing.assert_array_equal(model.predict(rng.normal(size=(6, 3))), np.full((6, 4), 0.25))

    def test_label_permutation_equivariance(self, rng):
        x = rng.normal(size=(40, 2))
        y = rng.integers(1, 4, size=40)
        perm = np.array([3, 1, 2])  # label k becomes perm[k-1]
        a = fit_softmax(LabeledDataset(x, y), iters=200, k_classes=3)
        b = fit_softmax(LabeledDataset(x, perm[y - 1]), iters=200, k_classes=3)
        Q = rng.normal(size=(10, 2))
        np.testing.assert_allclose(b.predict(Q)[:, perm - 1], a.predict(Q), atol=1e-12)

    def test_deterministic(self, rng):
        train = LabeledDataset(rng.normal(size=(30, 2)), rng.integers(1, 3, size=30))
        a, b = fit_softmax(train, iters=50), fit_softmax(train, iters=50)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())

    @pytest.mark.parametrize("kw", [dict(step=0.0), dict(step=-1.0), dict(iters=-1)])
    def test_bad_hyper(self, rng, kw):
        train = LabeledDataset(rng.normal(size=(5, 2)), rng.integers(1, 3, size=5))
        with pytest.raises(ValueError):
            fit_softmax(train, **kw)

    def test_warns_when_fewer_rows_than_classes(self):
        train = LabeledDataset(np.array([[0.0], [1.0]]), np.array([1, 2]))
        with pytest.warns(RuntimeWarning):
            fit_softmax(train, iters=5, k_classes=4)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        h = 1e-5
        for _ in range(25):
            n, d, K = int(rng.integers(2, 21)), int(rng.integers(1, 5)), int(rng.integers(2, 5))
            X = rng.normal(size=(n, d))
            Z = _design(X, X.mean(0), X.std(0) + 0.5)
            Y = np.eye(K)[rng.integers(0, K, size=n)]
            W = rng.normal(size=(K, d + 1))
            l2 = float(rng.uniform(0, 0.1))
            _, g = softmax_loss_grad(W, Z, Y, l2)
            num = finite_difference_gradient(lambda V: softmax_loss_grad(V, Z, Y, l2)[0], W, h)
            rel = np.linalg.norm(g - num) / max(np.linalg.norm(g), np.linalg.norm(num))
            assert rel <= 1e-5

    def test_loss_decreases(self, rng):
        spec = sample_mixture_spec(4, 3, 1)
        train = spec.sample_labeled(300, 2)
        short, long = fit_softmax(train, iters=10), fit_softmax(train, iters=500)
        test = spec.sample_labeled(2000, 3)
        nll = lambda m: -np.mean(np.log(m.predict(test.features)[np.arange(test.n), test.labels - 1]))
        assert nll(long) < nll(short)


@pytest.fixture(scope="module")
def models():
    spec = sample_mixture_spec(6, 4, 3)
    train = spec.sample_labeled(200, 1)
    return [OraclePosterior(spec), fit_knn(train), fit_softmax(train, iters=300, k_classes=6)]


class TestAllModels:
    def test_predictions_in_simplex(self, models, rng):
        Q = rng.uniform(-2, 6, size=(1000, 4))
        for m in models:
            p = m.predict(Q)
            assert p.shape == (1000, 6)
            assert np.all((p >= 0) & (p <= 1))
            tol = 0 if m.kind == "knn" else 1e-9
            assert np.max(np.abs(p.sum(axis=1) - 1)) <= tol + 1e-15

    def test_json_round_trip(self, models, rng):
        Q = rng.uniform(-2, 6, size=(50, 4))
        for m in models:
            back = model_from_dict(json.loads(json.dumps(m.to_dict())))
            np.testing.assert_array_equal(back.predict(Q), m.predict(Q))

    def test_dimension_check(self, models):
        for m in models:
            with pytest.raises(ValueError):
                m.predict(np.zeros(3))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            model_from_dict({"kind": "forest"})
