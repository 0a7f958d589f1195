import numpy as np
import pytest

from lupi_affect.errors import ConfigurationError
from lupi_affect.evaluation.folds import make_folds
from lupi_affect.training import split_train_val
from lupi_affect.windowing import WindowDataset

IDS = [f"P{i:03d}" for i in range(1, 24)]


def test_fold_sizes_for_23_participants():
    plan = make_folds(IDS, k=5, repeats=5, seed=0)
    for r in range(5):
        assert sorted(len(f) for f in plan.folds(r)) == [4, 4, 5, 5, 5]
        assert sorted(p for f in plan.folds(r) for p in f) == IDS


def test_repeats_reshuffle_and_plans_are_reproducible():
    plan = make_folds(IDS, 5, 5, 3)
    assert plan.hash() == make_folds(list(reversed(IDS)), 5, 5, 3).hash()
    assert len({tuple(map(tuple, plan.folds(r))) for r in range(5)}) == 5
    assert make_folds(IDS, 5, 5, 4).hash() != plan.hash()
    # repeat r depends only on (seed, r)
    assert make_folds(IDS, 5, 2, 3).assignments == plan.assignments[:2]


def test_too_few_participants():
    with pytest.raises(ConfigurationError):
        make_folds(IDS[:4], k=5)


def fake_dataset(ids, per_participant=7):
    parts = np.repeat(np.array(ids), per_participant)
    n = len(parts)
    return WindowDataset(
        pixels=np.zeros((n, 1, 2, 2), np.float32),
        privileged=np.zeros((n, 1)),
        labels=np.zeros(n),
        participants=parts,
        starts=np.zeros(n),
        window_length=1.0,
    )


def test_no_overlap_across_train_val_test_in_1000_plans():
    rng = np.random.default_rng(0)
    for seed in range(1000):
        n = int(rng.integers(5, 30))
        ids = [f"S{i:02d}" for i in range(n)]
        plan = make_folds(ids, k=5, repeats=1, seed=seed)
        f = seed % 5
        test = set(plan.test_participants(0, f))
        train_all = fake_dataset(plan.train_participants(0, f))
        train, val = split_train_val(train_all, 0.1, seed)
        tr, va = set(train.participant_ids()), set(val.participant_ids())
        assert not (tr & va or tr & test or va & test)
        assert tr | va | test == set(ids)
