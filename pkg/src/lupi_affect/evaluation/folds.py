"""Participant-grouped k-fold plans, repeated with reshuffles."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError


@dataclass(frozen=True)
class FoldPlan:
    k: int
    repeats: int
    seed: int
    assignments: tuple  # per repeat: tuple of (participant, fold) pairs, sorted by participant

    def folds(self, repeat):
        """Participants of each fold in ``repeat``, as a list of sorted lists."""
        out = [[] for _ in range(self.k)]
        for pid, fold in self.assignments[repeat]:
            out[fold].append(pid)
        return [sorted(f) for f in out]

    def test_participants(self, repeat, fold):
        return self.folds(repeat)[fold]

    def train_participants(self, repeat, fold):
        return sorted(p for p, f in self.assignments[repeat] if f != fold)

    def cells(self):
        return [(r, f) for r in range(self.repeats) for f in range(self.k)]

    def to_dict(self):
        return {
            "k": self.k,
            "repeats": self.repeats,
            "seed": self.seed,
            "assignments": [{p: f for p, f in rep} for rep in self.assignments],
        }

    def hash(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def make_folds(participants, k=5, repeats=5, seed=0) -> FoldPlan:
    """Balanced partition of participants into ``k`` folds, once per repeat.

    Repeat ``r`` shuffles with ``SeedSequence([seed, r])``; fold sizes differ
    by at most one participant.
    """
    ids = sorted(set(participants))
    if len(ids) < k:
        raise ConfigurationError(f"{len(ids)} participants cannot fill {k} folds")
    if k < 2 or repeats < 1:
        raise ConfigurationError("need k >= 2 and repeats >= 1")
    assignments = []
    for r in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        order = rng.permutation(len(ids))
        fold_of = {ids[j]: pos % k for pos, j in enumerate(order)}
        assignments.append(tuple(sorted(fold_of.items())))
    return FoldPlan(k, repeats, int(seed), tuple(assignments))
