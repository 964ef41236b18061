import json

import numpy as np
import pytest

from calm.bench import gen_case, r2_score
from calm.fitting import FitConfig
from calm.model import (
    FORMAT, IDENTITY, LOGIT, VERSION, CalmModel, ModelFormatError, PipelineConfig, count_interactions, load,
    predict, save, score, train_calm, train_gam,
)
from calm.partition import PartitionParams
from calm.tabular import BINARY, Dataset, ScalerState

from helpers import const_shape, leaf_tree, make_model, split_tree, step_shape, vline_model


def zero_model(beta0=1.0, task="regression"):
    return make_model([leaf_tree(0), leaf_tree(1)], [[const_shape(0, 1, 0.0)], [const_shape(1, 1, 0.0)]], beta0, task)


class TestScoring:
    def test_intercept_only(self):
        X = np.random.default_rng(0).uniform(-5, 5, (10, 2))
        np.testing.assert_array_equal(zero_model().score(X), 1.0)
        np.testing.assert_array_equal(score(zero_model(), X), 1.0)

    def test_identity_shape(self):
        m = make_model([leaf_tree(0)], [[step_shape(0, 1, lambda x: x, bins=2000)]], beta0=0.5)
        x = np.linspace(-0.99, 0.99, 11)[:, None]
        np.testing.assert_allclose(m.score(x), 0.5 + x[:, 0], atol=1e-3)

    def test_region_routing(self):
        m = vline_model()
        np.testing.assert_array_equal(m.regions([[0.0, 0.0], [0.5, 0.0]]), [[1, 1], [1, 2]])
        np.testing.assert_array_equal(m.score([[0.0, 0.0], [0.5, 0.0]]), [0.0, 0.37])

    def test_order_preserved(self):
        m = vline_model(lambda x: x)
        X = np.random.default_rng(1).uniform(-1, 1, (30, 2))
        batch = m.score(X)
        np.testing.assert_array_equal(batch, [m.score(r)[0] for r in X])

    def test_wrong_width(self):
        with pytest.raises(ValueError, match="expects 2"):
            zero_model().score([[1.0, 2.0, 3.0]])


class TestPredict:
    def test_logit_half(self):
        m = zero_model(0.0, BINARY)
        assert m.link == LOGIT
        np.testing.assert_array_equal(predict(m, [[0.3, 0.1]]), [0.5])

    def test_target_scaler_inverse(self):
        m = zero_model(1.0)
        m.scaler = ScalerState(np.zeros(2), np.ones(2), np.ones(2, bool), (), 10.0, 2.0)
        assert m.link == IDENTITY
        np.testing.assert_array_equal(m.predict([[0.0, 0.0]]), [12.0])

    def test_without_scaler_is_score(self):
        np.testing.assert_array_equal(zero_model(3.0).predict([[0.0, 0.0]]), [3.0])


class TestValidation:
    def test_shapes_must_match_leaves(self):
        with pytest.raises(ValueError, match="feature 1"):
            make_model([leaf_tree(0), split_tree(1, 0, 0.0)], [[const_shape(0, 1, 0)], [const_shape(1, 1, 0)]])

    def test_one_tree_per_feature(self):
        with pytest.raises(ValueError, match="one partition tree"):
            make_model([leaf_tree(0)], [[const_shape(0, 1, 0)], [const_shape(1, 1, 0)]])


class TestPersistence:
    def test_round_trip_bit_exact(self, case1, tmp_path):
        m = case1.model
        save(m, tmp_path / "m.json")
        back = load(tmp_path / "m.json")
        X = gen_case(1, 500, seed=9).X
        assert np.array_equal(back.score(X), m.score(X))
        assert back.to_dict() == m.to_dict()
        back.save(tmp_path / "again.json")
        assert (tmp_path / "again.json").read_bytes() == (tmp_path / "m.json").read_bytes()

    def test_header(self, tmp_path):
        zero_model().save(tmp_path / "m.json")
        d = json.loads((tmp_path / "m.json").read_text())
        assert (d["format"], d["version"], d["link"]) == (FORMAT, VERSION, IDENTITY)

    def test_empty_file(self, tmp_path):
        (tmp_path / "m.json").write_text("")
        with pytest.raises(ModelFormatError, match="empty"):
            load(tmp_path / "m.json")

    def test_truncated_file(self, tmp_path):
        zero_model().save(tmp_path / "m.json")
        text = (tmp_path / "m.json").read_text()
        (tmp_path / "m.json").write_text(text[: len(text) // 2])
        with pytest.raises(ModelFormatError, match="truncated"):
            load(tmp_path / "m.json")

    def test_unknown_version_named(self, tmp_path):
        d = zero_model().to_dict()
        d["version"] = 99
        (tmp_path / "m.json").write_text(json.dumps(d))
        with pytest.raises(ModelFormatError, match="99"):
            load(tmp_path / "m.json")

    @pytest.mark.parametrize("change", [{"format": "other"}, {"link": "logit"}, {"shapes": []}])
    def test_bad_content(self, change):
        d = zero_model().to_dict()
        d.update(change)
        with pytest.raises(ModelFormatError):
            CalmModel.from_dict(d)


class TestPipeline:
    def test_case1_fit_quality(self, case1):
        ds = gen_case(1, 1000, seed=0)
        assert r2_score(ds.y, case1.model.predict(ds.X)) > 0.95

    def test_region_and_shape_bounds(self, case1, case2):
        for res in (case1, case2):
            m = res.model
            assert all(r <= 4 for r in m.partitions.n_regions)
            assert sum(len(per) for per in m.shapes.shapes) <= m.d * 2 ** 2
            assert count_interactions(m) == m.n_interactions

    def test_thresholds_in_raw_units(self):
        # shift and stretch the inputs: the learned split must move with them
        ds = gen_case(1, 600, seed=3)
        shifted = Dataset(ds.schema, ds.X * 5 + 100, ds.y)
        cfg = PipelineConfig(fit=FitConfig(rounds=50))
        a = train_calm(ds, cfg).model.partitions.trees[2].root.rule.threshold
        b = train_calm(shifted, cfg).model.partitions.trees[2].root.rule.threshold
        assert b == pytest.approx(a * 5 + 100, abs=1e-9)

    def test_k_limits_interactions(self):
        ds = gen_case(2, 600, seed=1)
        m = train_calm(ds, PipelineConfig(partition=PartitionParams(K=3), fit=FitConfig(rounds=20))).model
        assert m.n_interactions <= 3

    def test_gam_has_no_interactions(self):
        m = train_gam(gen_case(3, 300, seed=0), PipelineConfig(fit=FitConfig(rounds=20)))
        assert m.n_interactions == 0 and m.partitions.n_regions == [1, 1, 1]

    def test_jumps_and_meta_recorded(self, case1):
        m = case1.model
        assert set(m.jumps) == {0, 1, 2}
        assert m.jumps[0] == [] and len(m.jumps[1]) == 1
        assert m.meta["n_train"] == 1000 and m.meta["config"]["partition"]["K"] == "inf"

    def test_config_serializes(self):
        json.dumps(PipelineConfig().to_dict())
