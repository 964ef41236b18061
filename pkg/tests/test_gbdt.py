import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calm.gbdt import (
    LOGISTIC, LOGIT_CLAMP, SQUARED, FunctionPredictor, GbdtConfig, GbdtModel, RegressionTree, clamped_logit,
    fit_cart, gbdt_fit, predict_raw, sigmoid,
)
from calm.tabular import BINARY, CATEGORICAL, Dataset, FeatureMeta


def brute_force_split(X, t, min_leaf=1):
    """Best (gain, feature, threshold) by trying every midpoint."""
    best = (0.0, -1, 0.0)
    mu = t.mean()
    for f in range(X.shape[1]):
        u = np.unique(X[:, f])
        for a, b in zip(u[:-1], u[1:]):
            thr = 0.5 * (a + b)
            left = X[:, f] < thr
            nl, nr = left.sum(), (~left).sum()
            if nl < min_leaf or nr < min_leaf:
                continue
            sse = np.sum((t[left] - t[left].mean()) ** 2) + np.sum((t[~left] - t[~left].mean()) ** 2)
            gain = np.sum((t - mu) ** 2) - sse
            if gain > best[0] + 1e-9:
                best = (gain, f, thr)
    return best


class TestFitCart:
    def test_step(self):
        tree = fit_cart(np.array([[0.0], [1.0], [2.0], [3.0]]), np.array([0.0, 0.0, 1.0, 1.0]))
        assert tree.threshold[0] == 1.5
        np.testing.assert_array_equal(tree.predict(np.array([[-5.0], [1.49], [1.5], [9.0]])), [0, 0, 1, 1])

    def test_constant_target_is_leaf(self):
        tree = fit_cart(np.arange(10.0)[:, None], np.full(10, 3.0))
        assert tree.n_nodes == 1 and tree.value[0] == 3.0

    def test_depth_limit(self):
        X = np.arange(64.0)[:, None]
        tree = fit_cart(X, X[:, 0] ** 2, max_depth=3)
        assert tree.depth == 3

    def test_min_leaf(self):
        X = np.arange(20.0)[:, None]
        t = np.where(X[:, 0] < 2, 10.0, 0.0)
        tree = fit_cart(X, t, max_depth=1, min_leaf=5)
        assert tree.threshold[0] == 4.5  # the 1.5 split would leave 2 rows

    def test_categorical_one_vs_rest(self):
        X = np.array([[0.0], [1.0], [2.0], [1.0], [0.0], [2.0]])
        t = np.array([0.0, 5.0, 0.0, 5.0, 0.0, 0.0])
        tree = fit_cart(X, t, max_depth=1, categorical=[True])
        assert tree.categorical[0] and tree.threshold[0] == 1.0
        np.testing.assert_array_equal(tree.predict(X), t)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            fit_cart(np.zeros((0, 1)), np.zeros(0))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(4, 40), st.integers(1, 3))
    def test_root_matches_brute_force(self, seed, n, d):
        rng = np.random.default_rng(seed)
        X = rng.integers(0, 6, size=(n, d)).astype(float)
        t = rng.normal(size=n)
        gain, f, thr = brute_force_split(X, t)
        tree = fit_cart(X, t, max_depth=1)
        if f < 0:
            assert tree.n_nodes == 1
            return
        left = X[:, tree.feature[0]] < tree.threshold[0]
        got = np.sum((t - t.mean()) ** 2) - (
            np.sum((t[left] - t[left].mean()) ** 2) + np.sum((t[~left] - t[~left].mean()) ** 2)
        )
        assert got == pytest.approx(gain, rel=1e-9, abs=1e-9)

    def test_tree_round_trip(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50, 2))
        tree = fit_cart(X, X[:, 0] * X[:, 1], max_depth=4)
        back = RegressionTree.from_dict(json.loads(json.dumps(tree.to_dict())))
        np.testing.assert_array_equal(back.predict(X), tree.predict(X))


class TestLinkHelpers:
    def test_sigmoid_stable(self):
        np.testing.assert_allclose(sigmoid(np.array([-1000.0, 0.0, 1000.0])), [0.0, 0.5, 1.0])

    @pytest.mark.parametrize("p, expected", [(0.5, 0.0), (0.0, -LOGIT_CLAMP), (1.0, LOGIT_CLAMP), (0.75, np.log(3.0))])
    def test_clamped_logit(self, p, expected):
        assert clamped_logit(p) == pytest.approx(expected)


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, size=(300, 2))
    return Dataset([FeatureMeta("a"), FeatureMeta("b")], X, np.sin(3 * X[:, 0]) + X[:, 1] ** 2)


_CACHE = {}


def _small_model():
    if "m" not in _CACHE:
        rng = np.random.default_rng(5)
        X = rng.uniform(-1, 1, size=(100, 2))
        _CACHE["m"] = gbdt_fit(Dataset([FeatureMeta("a"), FeatureMeta("b")], X, X[:, 0] * X[:, 1]), GbdtConfig(rounds=10))
    return _CACHE["m"]


class TestGbdt:
    def test_base_score_is_mean(self, data):
        m = gbdt_fit(data, GbdtConfig(rounds=0))
        assert m.base_score == pytest.approx(data.y.mean())
        np.testing.assert_allclose(m.predict_raw(data.X), data.y.mean())

    def test_squared_loss_non_increasing(self, data):
        m = gbdt_fit(data, GbdtConfig(rounds=40))
        assert m.objective == SQUARED
        assert np.all(np.diff(m.loss_trace) <= 1e-12)
        assert m.loss_trace[-1] < 0.05 * m.loss_trace[0]

    def test_logistic(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(-1, 1, size=(400, 2))
        y = (X[:, 0] + 0.3 * X[:, 1] > 0).astype(float)
        ds = Dataset([FeatureMeta("a"), FeatureMeta("b")], X, y, BINARY)
        m = gbdt_fit(ds, GbdtConfig(rounds=30))
        assert m.objective == LOGISTIC
        assert m.base_score == pytest.approx(clamped_logit(y.mean()))
        assert m.loss_trace[-1] < m.loss_trace[0]
        p = m.predict(X)
        assert np.all((p > 0) & (p < 1))
        assert np.mean((p >= 0.5) == (y == 1)) > 0.95

    def test_objective_task_mismatch(self, data):
        with pytest.raises(ValueError, match="logistic"):
            gbdt_fit(data, GbdtConfig(rounds=1, objective=LOGISTIC))

    def test_flat_prediction_equals_tree_sum(self, data):
        m = gbdt_fit(data, GbdtConfig(rounds=10))
        manual = m.base_score + m.learning_rate * sum(t.predict(data.X) for t in m.trees)
        np.testing.assert_allclose(m.predict_raw(data.X), manual, rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(predict_raw(m, data.X[:3]), m.predict_raw(data.X[:3]))

    def test_one_full_round_reproduces_targets(self):
        # distinct x, lr 1, unlimited depth, leaves of one row: each leaf mean is its own target
        X = np.arange(12.0)[:, None]
        y = np.sin(X[:, 0])
        ds = Dataset([FeatureMeta("a")], X, y)
        m = gbdt_fit(ds, GbdtConfig(rounds=1, learning_rate=1.0, max_depth=None, min_leaf=1))
        np.testing.assert_allclose(m.predict_raw(X), y, rtol=0, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.permutations(list(range(20))))
    def test_batch_permutation(self, perm):
        m = _small_model()
        X = np.linspace(-1, 1, 40).reshape(20, 2)
        np.testing.assert_array_equal(m.predict_raw(X[perm]), m.predict_raw(X)[perm])

    def test_save_load(self, data, tmp_path):
        m = gbdt_fit(data, GbdtConfig(rounds=15))
        m.save(tmp_path / "t.json")
        back = GbdtModel.load(tmp_path / "t.json")
        np.testing.assert_array_equal(back.predict_raw(data.X), m.predict_raw(data.X))

    def test_load_rejects_version(self, tmp_path):
        (tmp_path / "t.json").write_text(json.dumps({"format": "calm-gbdt", "version": 7}))
        with pytest.raises(ValueError, match="7"):
            GbdtModel.load(tmp_path / "t.json")

    def test_categorical_feature(self):
        rng = np.random.default_rng(4)
        c = rng.integers(0, 3, 200).astype(float)
        ds = Dataset([FeatureMeta("c", CATEGORICAL, ("p", "q", "r"))], c[:, None], np.array([0.0, 2.0, -1.0])[c.astype(int)])
        m = gbdt_fit(ds, GbdtConfig(rounds=50))
        np.testing.assert_allclose(m.predict_raw(np.array([[0.0], [1.0], [2.0]])), [0.0, 2.0, -1.0], atol=1e-2)


def test_function_predictor():
    f = FunctionPredictor(lambda X: X[:, 0] * 2)
    np.testing.assert_array_equal(f.predict_raw([[1.0], [3.0]]), [2.0, 6.0])
