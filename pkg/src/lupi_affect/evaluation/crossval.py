"""Grouped cross-validation of baselines, teachers and students on identical splits."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..models import build_model
from ..training import TrainConfig, predictions, spec_for, split_train_val, train_model, train_student, train_teacher
from ..windowing import LabelingConfig, WindowDataset, apply_normalizer, fit_feature_normalizer, label_split
from .folds import FoldPlan
from .metrics import accuracy, ccc, confidence_halfwidth, majority_baseline, pcc, safe_metric

log = logging.getLogger(__name__)

METRICS = {"classification": ("accuracy",), "regression": ("pcc", "ccc")}


@dataclass(frozen=True)
class ModelEntry:
    """One compared model: a baseline/teacher kind, or a student of ``teacher`` at ``alpha``."""

    kind: str  # majority | pixelnet | privnet | fusionnet | student
    teacher: str | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in ("majority", "pixelnet", "privnet", "fusionnet", "student"):
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if self.kind == "student" and (self.teacher not in ("privnet", "fusionnet") or self.alpha is None):
            raise ConfigurationError("a student entry needs teacher in {privnet, fusionnet} and alpha")

    @property
    def name(self):
        if self.kind == "student":
            return f"student-{self.teacher}-a{self.alpha:g}"
        return self.kind


@dataclass
class FoldData:
    repeat: int
    fold: int
    seed: int
    train: WindowDataset
    val: WindowDataset
    test: WindowDataset
    threshold: float | None
    split_hash: str


def fold_seed(base_seed, repeat, fold):
    return int(np.random.SeedSequence([int(base_seed), int(repeat), int(fold)]).generate_state(1)[0] % (2**31))


def prepare_fold(dataset: WindowDataset, plan: FoldPlan, repeat, fold, labeling: LabelingConfig,
                 train_cfg: TrainConfig, label_range=None) -> FoldData:
    """Train/val/test sets of one CV cell.

    Validation participants are split off the training fold; the class
    threshold comes from the training fold and the feature normalizer from
    the training part only.
    """
    seed = fold_seed(train_cfg.seed, repeat, fold)
    test = dataset.for_participants(plan.test_participants(repeat, fold))
    train_all = dataset.for_participants(plan.train_participants(repeat, fold))
    train, val = split_train_val(train_all, train_cfg.val_fraction, seed)
    if labeling.task == "classification":
        t = labeling.split_t if labeling.split_t is not None else float(np.median(train_all.labels))
        fixed = LabelingConfig("classification", t, labeling.epsilon)
        threshold, (train, val, test) = label_split(train, [val, test], fixed, label_range)
    else:
        threshold = None
    norm = fit_feature_normalizer(train)
    train, val, test = (apply_normalizer(norm, d) for d in (train, val, test))
    payload = {
        "train": train.participant_ids(),
        "val": val.participant_ids(),
        "test": test.participant_ids(),
        "threshold": threshold,
        "n": [len(train), len(val), len(test)],
    }
    split_hash = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
    return FoldData(repeat, fold, seed, train, val, test, threshold, split_hash)


def score(task, pred, test: WindowDataset, label_range=None):
    if task == "classification":
        return {"accuracy": accuracy(pred, test.classes)}
    if label_range is not None:
        pred = np.clip(pred, *label_range)  # reporting-time clipping only
    return {"pcc": safe_metric(pcc, pred, test.labels), "ccc": safe_metric(ccc, pred, test.labels)}


def fit_entry(entry: ModelEntry, fd: FoldData, task, train_cfg: TrainConfig, teacher=None):
    """Train one entry on a fold. Returns ``(model_or_None, predictions, history_or_None)``."""
    cfg = train_cfg.with_seed(fd.seed)
    if entry.kind == "majority":
        if task != "classification":
            raise ConfigurationError("the majority baseline applies to classification only")
        clf = majority_baseline(fd.train.classes)
        return None, clf.predict(len(fd.test)), None
    if entry.kind in ("privnet", "fusionnet"):
        model, hist = train_teacher(entry.kind, fd.train, task, cfg, val=fd.val, seed=fd.seed)
    elif entry.kind == "pixelnet":
        model = build_model(spec_for("pixelnet", fd.train, task), fd.seed)
        model, hist = train_model(model, fd.train, task, cfg, val=fd.val)
    else:
        if teacher is None:
            raise ConfigurationError(f"{entry.name} needs a trained {entry.teacher} teacher")
        student = build_model(spec_for("studentnet", fd.train, task), fd.seed)
        model, hist = train_student(student, teacher, fd.train, task, entry.alpha, cfg, val=fd.val)
    return model, predictions(model, fd.test), hist


@dataclass
class MetricsReport:
    task: str
    rows: list = field(default_factory=list)

    @property
    def metrics(self):
        return METRICS[self.task]

    def models(self):
        seen = []
        for r in self.rows:
            if r["model"] not in seen:
                seen.append(r["model"])
        return seen

    def values(self, model, metric):
        rows = sorted((r for r in self.rows if r["model"] == model), key=lambda r: (r["repeat"], r["fold"]))
        return np.array([r[metric] for r in rows], dtype=np.float64)

    def aggregate(self):
        out = {}
        for m in self.models():
            out[m] = {}
            for metric in self.metrics:
                v = self.values(m, metric)
                finite = v[np.isfinite(v)]
                out[m][metric] = {
                    "mean": float(finite.mean()) if finite.size else float("nan"),
                    "ci95": confidence_halfwidth(v),
                    "n": int(v.size),
                    "missing": int(v.size - finite.size),
                }
        return out

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "repeat", "fold", "n_test", *self.metrics, "split_hash"])
        for r in sorted(self.rows, key=lambda r: (r["model"], r["repeat"], r["fold"])):
            w.writerow([r["model"], r["repeat"], r["fold"], r["n_test"],
                        *("" if not np.isfinite(r[m]) else repr(float(r[m])) for m in self.metrics),
                        r["split_hash"]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, task, text):
        rows = []
        for r in csv.DictReader(io.StringIO(text)):
            row = {"model": r["model"], "repeat": int(r["repeat"]), "fold": int(r["fold"]),
                   "n_test": int(r["n_test"]), "split_hash": r["split_hash"]}
            for m in METRICS[task]:
                row[m] = float(r[m]) if r[m] != "" else float("nan")
            rows.append(row)
        return cls(task, rows)


def run_cv(entries, dataset: WindowDataset, plan: FoldPlan, task, labeling: LabelingConfig | None = None,
           train_cfg: TrainConfig | None = None, label_range=None) -> MetricsReport:
    """Evaluate every entry on every (repeat, fold) of ``plan`` with shared splits.

    Teachers are trained once per fold and reused by all students of that fold.
    """
    labeling = labeling or LabelingConfig(task)
    if labeling.task != task:
        raise ConfigurationError("labeling task disagrees with task")
    train_cfg = train_cfg or TrainConfig()
    entries = list(entries)
    report = MetricsReport(task)
    for repeat, fold in plan.cells():
        fd = prepare_fold(dataset, plan, repeat, fold, labeling, train_cfg, label_range)
        teachers = {}
        needed = {e.teacher for e in entries if e.kind == "student"}
        ordered = sorted(entries, key=lambda e: e.kind == "student")
        for entry in ordered:
            teacher = teachers.get(entry.teacher) if entry.kind == "student" else None
            if entry.kind == "student" and teacher is None:
                teacher, _ = train_teacher(entry.teacher, fd.train, task, train_cfg.with_seed(fd.seed),
                                           val=fd.val, seed=fd.seed)
                teachers[entry.teacher] = teacher
            model, pred, _ = fit_entry(entry, fd, task, train_cfg, teacher)
            if entry.kind in needed and model is not None:
                teachers[entry.kind] = model
            row = {"model": entry.name, "repeat": repeat, "fold": fold, "n_test": len(fd.test),
                   "split_hash": fd.split_hash, **score(task, pred, fd.test, label_range)}
            report.rows.append(row)
            log.info("r%d f%d %s %s", repeat, fold, entry.name, {m: row[m] for m in report.metrics})
    return report
