import csv
import io
import math

import numpy as np
import pytest

from calm.bench import (
    CSV_FIELDS, MODELS, FoldError, MetricsRow, accuracy, case_target, evaluate_cv, gen_case, r2_score, rmse,
    rows_to_csv, run_bench,
)
from calm.fitting import FitConfig
from calm.gbdt import GbdtConfig
from calm.model import PipelineConfig, count_interactions
from calm.tabular import BINARY, Dataset

from helpers import schema

FAST = PipelineConfig(teacher=GbdtConfig(rounds=30, max_depth=4), fit=FitConfig(rounds=30))


class TestCases:
    def test_case1_value(self):
        # 0.5^2 + ln 0.25 + 2 sin(pi/2)
        assert case_target(1, np.array([[0.5, 0.25, 1.0]]))[0] == pytest.approx(0.8637056388, abs=1e-9)

    def test_case1_cosine_branch(self):
        x3 = np.linspace(-1, 1, 9)
        X = np.column_stack([np.full(9, 0.3), np.full(9, -0.5), x3])
        np.testing.assert_allclose(case_target(1, X), 0.09 + math.log(0.5) + 2 * np.cos(np.pi * x3 / 2), rtol=1e-14)

    def test_case3_zero_sine(self):
        X = np.column_stack([np.linspace(-1, 1, 5), np.full(5, 0.7), np.zeros(5)])
        np.testing.assert_array_equal(case_target(3, X), X[:, 0] ** 2)

    @pytest.mark.parametrize("x1, x2, g", [
        (0.5, 0.5, lambda t: np.sin(np.pi * t / 2)), (0.5, -0.5, lambda t: np.cos(np.pi * t / 2)),
        (-0.5, 0.5, lambda t: np.sin(2 * np.pi * t)), (-0.5, -0.5, lambda t: np.cos(2 * np.pi * t)),
    ])
    def test_case2_quadrants(self, x1, x2, g):
        t = np.linspace(-1, 1, 7)
        X = np.column_stack([np.full(7, x1), np.full(7, x2), t])
        np.testing.assert_allclose(case_target(2, X), 0.25 + math.log(0.5) + 2 * g(t), rtol=1e-12, atol=1e-14)

    def test_generator(self):
        a, b = gen_case(2, 50, seed=4), gen_case(2, 50, seed=4)
        assert a.names == ["x1", "x2", "x3"] and a.X.shape == (50, 3)
        np.testing.assert_array_equal(a.X, b.X)
        assert np.all(np.abs(a.X) <= 1)
        assert not np.array_equal(a.X, gen_case(2, 50, seed=5).X)

    @pytest.mark.parametrize("case, n", [(4, 10), (1, 0)])
    def test_rejects(self, case, n):
        with pytest.raises(ValueError):
            gen_case(case, n)


class TestMetrics:
    def test_r2(self):
        y = np.array([1.0, 2.0, 3.0])
        assert r2_score(y, y) == 1.0
        assert r2_score(y, np.full(3, 2.0)) == 0.0

    def test_rmse(self):
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5))

    def test_accuracy(self):
        assert accuracy([0, 1, 1, 0], [0.2, 0.7, 0.4, 0.5]) == 0.5

    def test_row_invariant(self):
        with pytest.raises(ValueError):
            MetricsRow("CALM", "r2", 0.5, -1.0, 5)


@pytest.fixture(scope="module")
def result():
    return evaluate_cv(gen_case(1, 300, seed=1), FAST, k=3, seed=1)


class TestCrossValidation:
    def test_rows(self, result):
        assert [(r.model, r.metric) for r in result.rows] == [(m, k) for m in MODELS for k in ("r2", "rmse")]
        assert all(r.folds == 3 and r.std >= 0 for r in result.rows)
        assert result.row("GAM", "r2").interactions == 0.0
        assert result.row("teacher", "r2").interactions is None

    def test_mean_over_folds(self, result):
        vals = [f.scores["CALM"]["r2"] for f in result.folds]
        assert result.row("CALM", "r2").mean == pytest.approx(np.mean(vals))
        assert result.row("CALM", "r2").interactions == pytest.approx(np.mean([f.interactions for f in result.folds]))

    def test_model_ordering(self, result):
        # interactions exist by construction: the teacher beats the additive fit
        gam = result.row("GAM", "r2").mean
        assert result.row("teacher", "r2").mean > gam
        assert result.row("CALM", "r2").mean >= gam - 0.01

    def test_binary_uses_accuracy(self):
        ds0 = gen_case(1, 200, seed=2)
        ds = Dataset(schema(3), ds0.X, (ds0.y > np.median(ds0.y)).astype(float), BINARY)
        res = evaluate_cv(ds, FAST, k=2)
        assert {r.metric for r in res.rows} == {"accuracy"}
        assert res.row("CALM", "accuracy").mean > 0.7

    def test_fold_failure_names_index(self):
        with pytest.raises(FoldError, match="fold 0"):
            # a logistic teacher on a regression target fails inside the fold
            evaluate_cv(gen_case(1, 40), PipelineConfig(teacher=GbdtConfig(rounds=1, objective="logistic")), k=2)

    def test_k_too_small(self):
        with pytest.raises(ValueError):
            evaluate_cv(gen_case(1, 40), FAST, k=1)


class TestOutput:
    def test_csv_layout(self):
        rows = [("1", 0, MetricsRow("CALM", "r2", 0.1 + 0.2, 0.0, 5, 2.0, 1.5))]
        text = rows_to_csv(rows)
        parsed = list(csv.reader(io.StringIO(text)))
        assert parsed[0] == CSV_FIELDS
        assert parsed[1] == ["1", "0", "CALM", "r2", "0.30000000000000004", "0.0", "5", "2.0"]
        assert rows_to_csv(rows, timing=True).splitlines()[1].endswith(",1.500")

    def test_run_bench_deterministic(self, tmp_path):
        a = run_bench([3], [0], folds=2, config=FAST, n=150, model_dir=tmp_path / "a")
        b = run_bench([3], [0], folds=2, config=FAST, n=150, model_dir=tmp_path / "b")
        assert rows_to_csv(a) == rows_to_csv(b)
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == ["case3_seed0_fold0.json", "case3_seed0_fold1.json"]
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestInteractions:
    def test_case2_needs_depth(self, case2):
        assert count_interactions(case2.model) >= 3

    def test_case1_count(self, case1):
        # one interacting pair in the generator: expected 2 +- 1
        assert abs(count_interactions(case1.model) - 2) <= 1
