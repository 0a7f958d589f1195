"""Sweep and compare runners.

Results live under ``<runs root>/<name>/``::

    manifest.json                     config, corpus and fold-plan hashes, result paths
    corpus/                           generated corpus (generator configs only)
    cells/w<L>/r<R>f<F>/<model>/      result.json, history.csv, model.pt (one leaf per cell)
    sweep/metrics.csv, alpha_table.csv
    compare/metrics.csv, summary.csv, significance.json, best_alpha.json

A cell is one model trained and tested on one (window, repeat, fold). Its
hash covers everything that determines its result, so the sweep and the
compare step share cells (the compare plan's first repeat is the sweep's).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .. import __version__
from ..corpus import corpus_hash, read_corpus
from ..errors import ConfigurationError, LupiError
from ..evaluation.crossval import METRICS, ModelEntry, fit_entry, prepare_fold, score
from ..evaluation.folds import make_folds
from ..evaluation.metrics import confidence_halfwidth
from ..evaluation.stats import paired_test
from ..models import load_checkpoint, parameter_count, parameter_hash, save_checkpoint
from ..synthetic import generate_corpus
from ..windowing import LabelingConfig, build_dataset
from .config import ExperimentConfig

log = logging.getLogger(__name__)

RUNS_ENV = "LUPI_RUNS_DIR"


class MissingSweepError(ConfigurationError):
    pass


def runs_root():
    return Path(os.environ.get(RUNS_ENV, "runs"))


def run_dir(config: ExperimentConfig, root=None):
    return Path(root) if root is not None else runs_root() / config.name


def _dump(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


@dataclass(frozen=True)
class Cell:
    window: float
    repeat: int
    fold: int
    entry: ModelEntry

    @property
    def key(self):
        return f"w{self.window:g}/r{self.repeat}f{self.fold}/{self.entry.name}"

    def teacher_cell(self):
        return Cell(self.window, self.repeat, self.fold, ModelEntry(self.entry.teacher))


class Workspace:
    """Loaded corpus, window datasets and fold plans for one experiment."""

    def __init__(self, config: ExperimentConfig, root):
        self.config = config
        self.root = Path(root)
        self._sessions = None
        self._datasets = {}
        self._folds = {}
        self.corpus_dir = self._ensure_corpus()
        self.corpus_hash = corpus_hash(self.corpus_dir)

    def _ensure_corpus(self):
        cfg = self.config
        if cfg.corpus is not None:
            path = Path(cfg.corpus)
            if not path.is_dir():
                raise ConfigurationError(f"corpus directory {path} does not exist")
            return path
        out = self.root / "corpus"
        manifest = out / "manifest.json"
        if manifest.is_file():
            saved = json.loads(manifest.read_text())
            if saved.get("generator") == cfg.generator.to_dict() and saved.get("corpus_hash") == corpus_hash(out):
                return out
        log.info("generating corpus in %s", out)
        generate_corpus(cfg.generator, out, overwrite=True)
        return out

    @property
    def sessions(self):
        if self._sessions is None:
            self._sessions = read_corpus(self.corpus_dir, dimension=self.config.dimension)
        return self._sessions

    @property
    def label_range(self):
        return tuple(self.sessions[0].label_range)

    def dataset(self, window):
        if window not in self._datasets:
            self._datasets[window] = build_dataset(self.sessions, window, self.config.step)
        return self._datasets[window]

    def participants(self):
        return sorted(s.participant_id for s in self.sessions)

    def plan(self, repeats):
        if repeats not in self._folds:
            f = self.config.folds
            self._folds[repeats] = make_folds(self.participants(), f.k, repeats, f.seed)
        return self._folds[repeats]

    def labeling(self):
        lab = self.config.labeling
        return LabelingConfig(self.config.task, lab.split_t, lab.epsilon)

    def fold_data(self, window, repeat, fold):
        key = (window, repeat, fold)
        if getattr(self, "_fold_key", None) != key:
            plan = self.plan(repeat + 1)
            self._fold_cache = prepare_fold(self.dataset(window), plan, repeat, fold, self.labeling(),
                                            self.config.training, self.label_range)
            self._fold_key = key
        return self._fold_cache

    def cell_dir(self, cell: Cell):
        return self.root / "cells" / cell.key

    def cell_hash(self, cell: Cell):
        cfg = self.config
        assignment = dict(self.plan(cell.repeat + 1).assignments[cell.repeat])
        payload = {
            "corpus": self.corpus_hash,
            "task": cfg.task,
            "dimension": cfg.dimension,
            "step": cfg.step,
            "training": asdict(cfg.training),
            "labeling": asdict(cfg.labeling),
            "k": cfg.folds.k,
            "seed": cfg.folds.seed,
            "window": cell.window,
            "repeat": cell.repeat,
            "fold": cell.fold,
            "assignment": assignment,
            "entry": asdict(cell.entry),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def cached_result(self, cell: Cell):
        path = self.cell_dir(cell) / "result.json"
        if not path.is_file():
            return None
        result = json.loads(path.read_text())
        return result if result.get("cell_hash") == self.cell_hash(cell) else None


# ------------------------------------------------------------------ one cell


def _run_cell(ws: Workspace, cell: Cell):
    task = ws.config.task
    out_dir = ws.cell_dir(cell)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "error.txt").unlink(missing_ok=True)
    start = time.perf_counter()
    fd = ws.fold_data(cell.window, cell.repeat, cell.fold)
    teacher = None
    if cell.entry.kind == "student":
        tcell = cell.teacher_cell()
        if ws.cached_result(tcell) is None:
            raise LupiError(f"teacher cell {tcell.key} has no valid result")
        teacher, _ = load_checkpoint(ws.cell_dir(tcell) / "model.pt")
    model, pred, hist = fit_entry(cell.entry, fd, task, ws.config.training, teacher)
    result = {
        "cell": cell.key,
        "cell_hash": ws.cell_hash(cell),
        "model": cell.entry.name,
        "window_length": cell.window,
        "repeat": cell.repeat,
        "fold": cell.fold,
        "split_hash": fd.split_hash,
        "threshold": fd.threshold,
        "n_train": len(fd.train),
        "n_val": len(fd.val),
        "n_test": len(fd.test),
        "metrics": score(task, pred, fd.test, ws.label_range),
        "seconds": round(time.perf_counter() - start, 3),
    }
    if model is not None:
        save_checkpoint(out_dir / "model.pt", model, {"cell": cell.key, "cell_hash": result["cell_hash"]})
        hist.write_csv(out_dir / "history.csv")
        result.update(parameter_count=parameter_count(model), parameter_hash=parameter_hash(model),
                      best_epoch=hist.best_epoch, stopped_epoch=hist.stopped_epoch, checkpoint="model.pt")
    if teacher is not None:
        result["teacher_parameter_hash"] = parameter_hash(teacher)
    _dump(out_dir / "result.json", result)
    return result


def _safe_run(ws, cell, resume):
    if resume:
        cached = ws.cached_result(cell)
        if cached is not None:
            return cell.key, "cached", None
    try:
        _run_cell(ws, cell)
        return cell.key, "trained", None
    except Exception as exc:  # recorded per cell, the run continues
        msg = f"{type(exc).__name__}: {exc}"
        (ws.cell_dir(cell) / "result.json").unlink(missing_ok=True)
        (ws.cell_dir(cell)).mkdir(parents=True, exist_ok=True)
        (ws.cell_dir(cell) / "error.txt").write_text(msg + "\n\n" + traceback.format_exc())
        log.error("cell %s failed: %s", cell.key, msg)
        return cell.key, "failed", msg


_WORKER = {}


def _worker_init(config_dict, root):
    torch.set_num_threads(1)
    _WORKER["ws"] = Workspace(ExperimentConfig.from_dict(config_dict), root)


def _worker_run(args):
    cell, resume = args
    return _safe_run(_WORKER["ws"], cell, resume)


def execute(ws: Workspace, cells, resume=True, jobs=1):
    """Run cells in two waves (teachers and baselines first, then students).

    Returns ``{cell_key: (status, message)}``. Cells are independent within
    a wave and carry their own seeds, so ``jobs`` does not change results.
    """
    status = {}
    waves = [[c for c in cells if c.entry.kind != "student"], [c for c in cells if c.entry.kind == "student"]]
    for wave in waves:
        # cells sharing a fold run consecutively so the fold data cache is hit
        wave = sorted(wave, key=lambda c: (c.window, c.repeat, c.fold))
        if jobs > 1 and len(wave) > 1:
            with ProcessPoolExecutor(jobs, initializer=_worker_init,
                                     initargs=(ws.config.to_dict(), str(ws.root))) as pool:
                for key, st, msg in pool.map(_worker_run, [(c, resume) for c in wave]):
                    status[key] = (st, msg)
        else:
            for c in wave:
                key, st, msg = _safe_run(ws, c, resume)
                status[key] = (st, msg)
    return status


# ------------------------------------------------------------------- tables


def collect_rows(ws: Workspace, cells):
    rows, missing = [], []
    for cell in cells:
        result = ws.cached_result(cell)
        if result is None:
            missing.append(cell.key)
            continue
        rows.append(result)
    return rows, missing


def check_split_identity(rows):
    """All models of one (window, repeat, fold) must have seen the same split."""
    seen = {}
    for r in rows:
        key = (r["window_length"], r["repeat"], r["fold"])
        if seen.setdefault(key, r["split_hash"]) != r["split_hash"]:
            raise LupiError(f"split hash mismatch in window {key[0]} repeat {key[1]} fold {key[2]}")


def metrics_csv(task, rows):
    metrics = METRICS[task]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window_length", "model", "repeat", "fold", "n_test", *metrics, "split_hash"])
    for r in sorted(rows, key=lambda r: (r["window_length"], r["model"], r["repeat"], r["fold"])):
        vals = ["" if r["metrics"][m] is None or not np.isfinite(r["metrics"][m]) else repr(float(r["metrics"][m]))
                for m in metrics]
        w.writerow([f"{r['window_length']:g}", r["model"], r["repeat"], r["fold"], r["n_test"], *vals,
                    r["split_hash"]])
    return buf.getvalue()


def read_metrics_csv(path, task):
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({
                "window_length": float(r["window_length"]),
                "model": r["model"],
                "repeat": int(r["repeat"]),
                "fold": int(r["fold"]),
                "n_test": int(r["n_test"]),
                "metrics": {m: (float(r[m]) if r[m] != "" else float("nan")) for m in METRICS[task]},
                "split_hash": r["split_hash"],
            })
    return rows


def metric_values(rows, window, model, metric):
    sel = sorted((r for r in rows if r["window_length"] == window and r["model"] == model),
                 key=lambda r: (r["repeat"], r["fold"]))
    return np.array([r["metrics"][metric] for r in sel], dtype=np.float64)


def summarize(rows, task):
    """Mean and 95% half-width per (window, model) of every metric."""
    out = []
    keys = sorted({(r["window_length"], r["model"]) for r in rows})
    for window, model in keys:
        entry = {"window_length": window, "model": model}
        for m in METRICS[task]:
            v = metric_values(rows, window, model, m)
            finite = v[np.isfinite(v)]
            entry[m] = float(finite.mean()) if finite.size else float("nan")
            entry[f"{m}_ci95"] = confidence_halfwidth(v)
            entry["n"] = int(v.size)
            entry[f"{m}_missing"] = int(v.size - finite.size)
        out.append(entry)
    return out


def primary_metric(task):
    return "accuracy" if task == "classification" else "ccc"


# -------------------------------------------------------------------- sweep


def sweep_cells(config: ExperimentConfig, repeats):
    cells = []
    for window in config.window_lengths:
        for r in range(repeats):
            for f in range(config.folds.k):
                entries = []
                if config.task == "classification":
                    entries.append(ModelEntry("majority"))
                entries.append(ModelEntry("pixelnet"))  # also the alpha = 0 student
                kinds = set(config.teachers) if "student" in config.models else set()
                kinds |= {m for m in config.models if m in ("privnet", "fusionnet")}
                entries += [ModelEntry(k) for k in ("privnet", "fusionnet") if k in kinds]
                if "student" in config.models:
                    for teacher in config.teachers:
                        entries += [ModelEntry("student", teacher, a) for a in config.alphas if a > 0]
                cells += [Cell(window, r, f, e) for e in entries]
    return cells


def _update_manifest(ws: Workspace, phase, repeats, rows, status):
    path = ws.root / "manifest.json"
    manifest = json.loads(path.read_text()) if path.is_file() else {}
    manifest.update({
        "tool_version": __version__,
        "config": ws.config.to_dict(),
        "config_hash": ws.config.hash(),
        "corpus_dir": str(ws.corpus_dir),
        "corpus_hash": ws.corpus_hash,
    })
    manifest.setdefault("fold_plans", {})[phase] = {"repeats": repeats, "hash": ws.plan(repeats).hash()}
    split_hashes = {}
    for r in rows:
        split_hashes[f"w{r['window_length']:g}/r{r['repeat']}f{r['fold']}"] = r["split_hash"]
    manifest.setdefault("split_hashes", {}).update(split_hashes)
    results = manifest.setdefault("results", {})
    for key, (st, _) in sorted(status.items()):
        results[key] = {"path": f"cells/{key}/result.json", "status": st}
    _dump(path, manifest)


@dataclass
class PhaseOutcome:
    status: dict
    rows: list
    missing: list

    @property
    def failed(self):
        return sorted(k for k, (st, _) in self.status.items() if st == "failed")

    @property
    def trained(self):
        return sorted(k for k, (st, _) in self.status.items() if st == "trained")


def run_sweep(config: ExperimentConfig, root=None, resume=False, jobs=None) -> PhaseOutcome:
    """Grouped CV of baselines, teachers and every (teacher, alpha) student."""
    ws = Workspace(config, run_dir(config, root))
    repeats = config.folds.sweep_repeats
    cells = sweep_cells(config, repeats)
    status = execute(ws, cells, resume=resume, jobs=jobs or config.jobs)
    rows, missing = collect_rows(ws, cells)
    check_split_identity(rows)
    out = ws.root / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(config.task, rows))
    from .report import alpha_table_csv

    (out / "alpha_table.csv").write_text(alpha_table_csv(config, summarize(rows, config.task)))
    _update_manifest(ws, "sweep", repeats, rows, status)
    return PhaseOutcome(status, rows, missing)


# ------------------------------------------------------------------ compare


def best_alphas(config: ExperimentConfig, summary):
    """Best non-zero alpha per (window, teacher); ties go to the smaller alpha."""
    metric = primary_metric(config.task)
    best = {}
    for window in config.window_lengths:
        for teacher in config.teachers:
            candidates = []
            for s in summary:
                if s["window_length"] != window or not s["model"].startswith(f"student-{teacher}-a"):
                    continue
                alpha = float(s["model"].rsplit("-a", 1)[1])
                if alpha > 0 and np.isfinite(s[metric]):
                    candidates.append((alpha, s[metric]))
            if candidates:
                top = max(v for _, v in candidates)
                best[f"{window:g}/{teacher}"] = min(a for a, v in candidates if v == top)
    return best


def compare_cells(config: ExperimentConfig, best, repeats):
    cells = []
    for window in config.window_lengths:
        entries = []
        if config.task == "classification":
            entries.append(ModelEntry("majority"))
        entries += [ModelEntry("pixelnet"), ModelEntry("privnet"), ModelEntry("fusionnet")]
        for teacher in config.teachers:
            alpha = best.get(f"{window:g}/{teacher}")
            if alpha is not None:
                entries.append(ModelEntry("student", teacher, alpha))
        for r in range(repeats):
            for f in range(config.folds.k):
                cells += [Cell(window, r, f, e) for e in entries]
    return cells


def significance(config: ExperimentConfig, rows, best):
    metric = primary_metric(config.task)
    reports = []
    for window in config.window_lengths:
        for teacher in config.teachers:
            alpha = best.get(f"{window:g}/{teacher}")
            if alpha is None:
                continue
            student = ModelEntry("student", teacher, alpha).name
            for baseline in ("pixelnet", "fusionnet"):
                a = metric_values(rows, window, student, metric)
                b = metric_values(rows, window, baseline, metric)
                entry = {"window_length": window, "student": student, "baseline": baseline, "metric": metric}
                if a.size != b.size or a.size < 5:
                    entry["error"] = f"need >= 5 paired values, have {a.size} and {b.size}"
                else:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")  # the report's note carries the message
                        entry.update(paired_test(a, b, names=(student, baseline)).to_dict())
                reports.append(entry)
    return reports


def run_compare(config: ExperimentConfig, root=None, jobs=None) -> PhaseOutcome:
    """Repeated grouped CV of the baselines, teachers and best-alpha students.

    Best alphas are read from the sweep aggregates. Cells already computed
    by the sweep (identical hash) are reused.
    """
    root = run_dir(config, root)
    sweep_csv = root / "sweep" / "metrics.csv"
    if not sweep_csv.is_file():
        raise MissingSweepError(f"no sweep results at {sweep_csv}; run `lupi-affect sweep` with this config first")
    summary = summarize(read_metrics_csv(sweep_csv, config.task), config.task)
    best = best_alphas(config, summary)
    ws = Workspace(config, root)
    repeats = config.folds.compare_repeats
    cells = compare_cells(config, best, repeats)
    status = execute(ws, cells, resume=True, jobs=jobs or config.jobs)
    rows, missing = collect_rows(ws, cells)
    check_split_identity(rows)
    out = root / "compare"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(config.task, rows))
    _dump(out / "best_alpha.json", best)
    from .report import summary_csv

    (out / "summary.csv").write_text(summary_csv(config.task, summarize(rows, config.task)))
    _dump(out / "significance.json", significance(config, rows, best))
    _update_manifest(ws, "compare", repeats, rows, status)
    return PhaseOutcome(status, rows, missing)
