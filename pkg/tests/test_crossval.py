import numpy as np
import pytest

from lupi_affect.evaluation.crossval import MetricsReport, ModelEntry, fold_seed, prepare_fold, run_cv, score
from lupi_affect.evaluation.folds import make_folds
from lupi_affect.training import TrainConfig
from lupi_affect.windowing import LabelingConfig

FAST = TrainConfig(batch_size=64, max_epochs=1, patience=1, seed=2)


@pytest.fixture(scope="module")
def plan(tiny_dataset):
    return make_folds(tiny_dataset.participant_ids(), k=3, repeats=1, seed=0)


@pytest.fixture(scope="module")
def cls_report(tiny_dataset, plan):
    entries = [ModelEntry("majority"), ModelEntry("pixelnet"), ModelEntry("privnet"),
               ModelEntry("student", "privnet", 0.5)]
    return run_cv(entries, tiny_dataset, plan, "classification", LabelingConfig("classification"), FAST)


def test_entry_names():
    assert ModelEntry("student", "privnet", 0.25).name == "student-privnet-a0.25"
    assert ModelEntry("fusionnet").name == "fusionnet"
    with pytest.raises(ValueError):
        ModelEntry("student", None, 0.5)


def test_fold_seeds_differ_per_cell():
    seeds = {fold_seed(0, r, f) for r in range(5) for f in range(5)}
    assert len(seeds) == 25 and all(0 <= s < 2**31 for s in seeds)


def test_fold_data_threshold_and_normalizer(tiny_dataset, plan):
    fd = prepare_fold(tiny_dataset, plan, 0, 1, LabelingConfig("classification"), FAST)
    train_all = tiny_dataset.for_participants(plan.train_participants(0, 1))
    assert fd.threshold == pytest.approx(float(np.median(train_all.labels)))
    assert np.allclose(fd.train.privileged.mean(axis=0), 0, atol=1e-9)
    assert set(fd.test.participant_ids()) == set(plan.test_participants(0, 1))
    again = prepare_fold(tiny_dataset, plan, 0, 1, LabelingConfig("classification"), FAST)
    assert again.split_hash == fd.split_hash


def test_all_models_share_splits(cls_report, plan):
    assert len(cls_report.rows) == 4 * len(plan.cells())
    for r, f in plan.cells():
        hashes = {row["split_hash"] for row in cls_report.rows if (row["repeat"], row["fold"]) == (r, f)}
        assert len(hashes) == 1


def test_metric_ranges_and_aggregate(cls_report):
    agg = cls_report.aggregate()
    for model in cls_report.models():
        v = cls_report.values(model, "accuracy")
        assert np.all((v >= 0) & (v <= 1))
        assert agg[model]["accuracy"]["mean"] == pytest.approx(v.mean())
        assert agg[model]["accuracy"]["n"] == len(v)


def test_csv_round_trip(cls_report):
    text = cls_report.to_csv()
    back = MetricsReport.from_csv("classification", text)
    assert back.to_csv() == text


def test_regression_scoring_clips_and_handles_constant():
    class Test:
        labels = np.array([-0.5, 0.0, 0.5])

    out = score("regression", np.array([-3.0, 0.0, 3.0]), Test, label_range=(-1, 1))
    assert out["pcc"] == pytest.approx(1.0)
    assert out["ccc"] == pytest.approx(2 * (1 / 3) / (2 / 3 + 1 / 6))
    flat = score("regression", np.zeros(3), Test)
    assert np.isnan(flat["pcc"]) and np.isnan(flat["ccc"])
