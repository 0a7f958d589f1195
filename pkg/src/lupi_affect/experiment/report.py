"""CSV tables and bar plots built from sweep/compare results."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from ..evaluation.crossval import METRICS
from .config import ExperimentConfig

MODEL_LABELS = {"majority": "Majority Class", "pixelnet": "PixelNet", "privnet": "PrivNet", "fusionnet": "FusionNet"}


def _fmt(v):
    return "" if v is None or not np.isfinite(v) else f"{v:.4f}"


def _lookup(summary, window, model):
    for s in summary:
        if s["window_length"] == window and s["model"] == model:
            return s
    return None


def alpha_table_csv(config: ExperimentConfig, summary):
    """One block per teacher: majority row (classification) plus one row per alpha.

    The alpha = 0 row is the PixelNet run, shared by every teacher block.
    """
    metrics = METRICS[config.task]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["teacher", "row", *(f"{m}_{win:g}s" for win in config.window_lengths for m in metrics)])

    def cells(model):
        out = []
        for win in config.window_lengths:
            s = _lookup(summary, win, model)
            out += [_fmt(s[m]) if s else "" for m in metrics]
        return out

    for teacher in config.teachers:
        if config.task == "classification":
            w.writerow([teacher, MODEL_LABELS["majority"], *cells("majority")])
        for alpha in sorted(set(config.alphas) | {0.0}):
            model = "pixelnet" if alpha == 0 else f"student-{teacher}-a{alpha:g}"
            w.writerow([teacher, f"Student (alpha={alpha:g})", *cells(model)])
    for model in ("pixelnet", "privnet", "fusionnet"):
        if any(s["model"] == model for s in summary):
            w.writerow(["-", MODEL_LABELS[model], *cells(model)])
    return buf.getvalue()


def summary_csv(task, summary):
    metrics = METRICS[task]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window_length", "model", "n", *(c for m in metrics for c in (m, f"{m}_ci95", f"{m}_missing"))])
    for s in sorted(summary, key=lambda s: (s["window_length"], s["model"])):
        w.writerow([f"{s['window_length']:g}", s["model"], s["n"],
                    *(c for m in metrics for c in (_fmt(s[m]), _fmt(s[f"{m}_ci95"]), s[f"{m}_missing"]))])
    return buf.getvalue()


def significance_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window_length", "student", "baseline", "metric", "mean_diff", "normality_p", "test_used",
                "p_value", "significant", "direction", "note"])
    for r in sorted(reports, key=lambda r: (r["window_length"], r["student"], r["baseline"])):
        if "error" in r:
            w.writerow([f"{r['window_length']:g}", r["student"], r["baseline"], r["metric"],
                        "", "", "", "", "", "", r["error"]])
            continue
        w.writerow([f"{r['window_length']:g}", r["student"], r["baseline"], r["metric"], _fmt(r["mean_diff"]),
                    _fmt(r["normality_p"]) if r["normality_p"] is not None else "", r["test_used"],
                    f"{r['p_value']:.6g}", r["significant"], r["direction"], r.get("note") or ""])
    return buf.getvalue()


def bar_plot(path, summary, window, metric, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [s for s in summary if s["window_length"] == window]
    labels = [MODEL_LABELS.get(s["model"], s["model"]) for s in rows]
    means = [s[metric] for s in rows]
    errs = [s[f"{metric}_ci95"] if np.isfinite(s[f"{metric}_ci95"]) else 0.0 for s in rows]
    fig, ax = plt.subplots(figsize=(1.2 * len(rows) + 2, 3.5))
    ax.bar(range(len(rows)), means, yerr=errs, capsize=4, color="0.6", edgecolor="0.2")
    ax.set_xticks(range(len(rows)), labels, rotation=30, ha="right")
    ax.set_ylabel(metric)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def build_report(config: ExperimentConfig, root):
    """Write tables and plots under ``<root>/report``; returns a list of gaps."""
    from .runner import read_metrics_csv, summarize

    root = Path(root)
    out = root / "report"
    out.mkdir(parents=True, exist_ok=True)
    gaps = []
    tag = f"{config.task}_{config.dimension}"
    sweep_csv = root / "sweep" / "metrics.csv"
    if sweep_csv.is_file():
        rows = read_metrics_csv(sweep_csv, config.task)
        summary = summarize(rows, config.task)
        (out / f"alpha_table_{tag}.csv").write_text(alpha_table_csv(config, summary))
        gaps += _row_gaps(config, rows, summary, "sweep")
    else:
        gaps.append("sweep: no results (sweep/metrics.csv missing)")
    compare_csv = root / "compare" / "metrics.csv"
    if compare_csv.is_file():
        rows = read_metrics_csv(compare_csv, config.task)
        summary = summarize(rows, config.task)
        (out / f"comparison_{tag}.csv").write_text(summary_csv(config.task, summary))
        sig_path = root / "compare" / "significance.json"
        if sig_path.is_file():
            (out / f"significance_{tag}.csv").write_text(significance_csv(json.loads(sig_path.read_text())))
        else:
            gaps.append("compare: significance.json missing")
        metric = "accuracy" if config.task == "classification" else "ccc"
        for window in sorted({s["window_length"] for s in summary}):
            bar_plot(out / f"comparison_{tag}_w{window:g}.png", summary, window, metric,
                     f"{config.dimension} {config.task}, {window:g} s windows")
        gaps += _row_gaps(config, rows, summary, "compare")
    else:
        gaps.append("compare: no results (compare/metrics.csv missing)")
    (out / "gaps.txt").write_text("".join(g + "\n" for g in gaps))
    return gaps


def _row_gaps(config, rows, summary, phase):
    gaps = []
    metric = "accuracy" if config.task == "classification" else "ccc"
    expected = None
    for s in summary:
        expected = max(expected or 0, s["n"])
    for s in summary:
        if s["n"] < (expected or 0):
            gaps.append(f"{phase}: {s['model']} at {s['window_length']:g} s has {s['n']} of {expected} folds")
        if s[f"{metric}_missing"]:
            gaps.append(f"{phase}: {s['model']} at {s['window_length']:g} s has "
                        f"{s[f'{metric}_missing']} undefined {metric} values")
    return gaps
