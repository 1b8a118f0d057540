import dataclasses

import numpy as np
import pytest

from forgeryttt import metrics
from forgeryttt.config import RunConfig, load_config
from forgeryttt.errors import EmptyDatasetError
from forgeryttt.evaluation import EvalResult, evaluate, format_table, write_curve, write_rows
from forgeryttt.model import build_model
from forgeryttt.synth import DatasetManifest, SynthConfig, generate_dataset
from forgeryttt.ttt import TTTConfig

from helpers import TINY


class TestConfig:
    def test_defaults_round_trip(self, tmp_path):
        cfg = RunConfig()
        cfg.write(tmp_path / "c.ini")
        assert load_config(tmp_path / "c.ini") == cfg

    def test_layering_order(self, tmp_path):
        (tmp_path / "c.ini").write_text("[run]\nseed = 7\n[train]\nlr = 0.5\nepochs = 3\n")
        cfg = load_config(tmp_path / "c.ini", ["train.epochs=4", "model.dims=8,16"], seed=11)
        assert cfg.seed == 11 and cfg.train.lr == 0.5 and cfg.train.epochs == 4
        assert cfg.model.dims == (8, 16)

    def test_seed_propagates(self):
        cfg = load_config(seed=42)
        assert cfg.resolved_train().seed == 42 and cfg.resolved_ttt().seed == 42

    @pytest.mark.parametrize("override", ["train.bogus=1", "nosection.x=1", "train.lr=abc", "ttt.seed=1",
                                          "novalue", "eval.distort_with_ttt=maybe"])
    def test_bad_overrides(self, override):
        with pytest.raises(ValueError):
            load_config(overrides=[override])

    def test_values_validated_by_dataclasses(self):
        with pytest.raises(ValueError):
            load_config(overrides=["ttt.strategy=fastest"])

    def test_bool_and_tuple_parsing(self):
        cfg = load_config(overrides=["eval.distort_with_ttt=yes", "eval.distortions=blur:3, jpeg:50"])
        assert cfg.eval.distort_with_ttt is True and cfg.eval.distortions == ("blur:3", "jpeg:50")


@pytest.fixture(scope="module")
def tiny_set(tmp_path_factory):
    root = tmp_path_factory.mktemp("evalset")
    return generate_dataset(SynthConfig(size=16, splice=2, copy_move=2, removal=2, authentic=2, pool_size=8,
                                        max_fraction=0.6, split="test"), 5, root)


class TestEvaluate:
    def test_rows_and_summary(self, tiny_set):
        model = build_model(TINY, seed=0)
        res = evaluate(model, tiny_set)
        assert len(res.rows) == 8 and {r["label"] for r in res.rows} == {0, 1}
        s = res.summary()
        assert 0 <= s["f_fix"] <= s["f_best"] <= 1 and 0 <= s["auc"] <= 1 and s["n"] == 8
        assert res.curve() == []

    def test_limit_and_empty(self, tiny_set, tmp_path):
        model = build_model(TINY, seed=0)
        assert len(evaluate(model, tiny_set, limit=3).rows) == 3
        with pytest.raises(EmptyDatasetError):
            evaluate(model, DatasetManifest(tmp_path, [], "test", 0))

    def test_ttt_curve_and_zero_steps(self, tiny_set, tmp_path):
        model = build_model(TINY, seed=0)
        plain = evaluate(model, tiny_set)
        zero = evaluate(model, tiny_set, TTTConfig(steps=0))
        assert [r["f_fix"] for r in plain.rows] == [r["f_fix"] for r in zero.rows]
        res = evaluate(model, tiny_set, TTTConfig(steps=2, batch=2, lr=1e-3), record_curve=True)
        curve = res.curve()
        assert len(curve) == 3 and curve[0] == pytest.approx(plain.mean("f_fix"))
        assert curve[-1] == pytest.approx(res.mean("f_fix"))
        assert len(res.passes) == 8 and all(p in (0, 2) for p in res.passes)
        write_curve(tmp_path / "curve.csv", res)
        write_rows(tmp_path / "rows.csv", res.rows)
        assert len((tmp_path / "curve.csv").read_text().splitlines()) == 4
        assert (tmp_path / "rows.csv").read_text().splitlines()[0] == "id,kind,f_fix,f_best,image_score,label"

    def test_distortion_is_deterministic(self, tiny_set):
        model = build_model(TINY, seed=0)
        d = metrics.Distortion.parse("noise:5")
        a = evaluate(model, tiny_set, distortion=d, seed=1)
        b = evaluate(model, tiny_set, distortion=d, seed=1)
        assert a.rows == b.rows

    def test_single_class_summary_reports_nan_auc(self):
        res = EvalResult(rows=[{"f_fix": 1.0, "f_best": 1.0, "image_score": 0.9, "label": 1}])
        s = res.summary()
        assert np.isnan(s["auc"]) and s["acc"] == 1.0


def test_format_table_deltas():
    clean = {"f_best": 0.5, "f_fix": 0.4, "auc": 0.8, "acc": 0.7, "n": 10}
    blur = dict(clean, f_best=0.45, f_fix=0.3)
    text = format_table({"clean": clean, "blur:3": blur}, baseline="clean")
    lines = text.splitlines()
    assert "dF_fix" in lines[0] and len(lines) == 4
    assert lines[3].split()[1:5] == ["45.0", "30.0", "80.0", "70.0"]
    assert lines[3].split()[-2:] == ["-5.0", "-10.0"]
    nan = format_table({"x": dict(clean, auc=float("nan"))})
    assert "n/a" in nan
