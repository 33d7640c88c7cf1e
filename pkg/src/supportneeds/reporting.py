"""Report files: machine-readable JSON, human-readable tables, delimited
curve data, and matplotlib figures rendered alongside them.

JSON output is canonical (sorted keys, no timestamps) so identical runs
produce byte-identical reports.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsReport, roc_points


def report_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def report_table(report: MetricsReport) -> str:
    """Fixed-width text rendering of a metrics report."""
    lines = ["metric             value", "-" * 32]

    def fmt(value) -> str:
        return f"{value:.4f}" if value is not None else "undefined"

    lines.append(f"micro_precision    {fmt(report.micro_precision)}")
    lines.append(f"micro_recall       {fmt(report.micro_recall)}")
    lines.append(f"micro_f1           {fmt(report.micro_f1)}")
    lines.append(f"micro_auc          {fmt(report.micro_auc)}")
    lines.append(f"n_samples          {report.n_samples}")
    if report.degenerate:
        lines.append("note: some denominators were zero; affected metrics set to 0")
    lines.append("")
    lines.append("per-class")
    for name in report.per_class_auc:
        auc = fmt(report.per_class_auc[name])
        recall = fmt(report.per_class_recall.get(name))
        lines.append(f"  {name:<16} auc={auc}  recall={recall}")
    if report.folds:
        lines.append("")
        lines.append("folds (mean +/- sd)")
        for key, mean in report.fold_mean.items():
            sd = report.fold_std.get(key, 0.0)
            lines.append(f"  {key:<16} {mean:.4f} +/- {sd:.4f}")
        lines.append("")
        header = f"  {'fold':>4}  " + "  ".join(f"{k:>15}" for k in report.fold_mean)
        lines.append(header)
        for row in report.folds:
            cells = []
            for key in report.fold_mean:
                value = row.get(key)
                cells.append(f"{value:>15.4f}" if value is not None else f"{'undefined':>15}")
            lines.append(f"  {row['fold']:>4}  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def write_report(
    report: MetricsReport, out_dir: str | Path, basename: str = "report"
) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / f"{basename}.json",
        "table": out / f"{basename}.txt",
    }
    paths["json"].write_text(report_json(report), encoding="utf-8")
    paths["table"].write_text(report_table(report), encoding="utf-8")
    return paths


def write_roc_outputs(
    y_true: np.ndarray,
    probs: np.ndarray,
    classes: tuple[str, ...],
    out_dir: str | Path,
    render_figure: bool = True,
) -> dict[str, Path]:
    """ROC point CSVs (micro + per class) and a rendered curve figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    y_true = np.asarray(y_true)
    probs = np.asarray(probs)
    curves: dict[str, list[tuple[float, float, float]]] = {}
    try:
        curves["micro"] = roc_points(y_true.ravel(), probs.ravel())
    except Exception:
        pass
    for c, name in enumerate(classes):
        try:
            curves[name] = roc_points(y_true[:, c], probs[:, c])
        except Exception:
            continue

    paths: dict[str, Path] = {}
    for name, points in curves.items():
        path = out / f"roc_{name}.csv"
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["fpr", "tpr", "threshold"])
            writer.writerows(points)
        paths[f"csv_{name}"] = path

    if render_figure and curves:
        fig, ax = plt.subplots(figsize=(5, 4))
        for name, points in curves.items():
            fpr = [p[0] for p in points]
            tpr = [p[1] for p in points]
            width = 2.0 if name == "micro" else 1.0
            ax.plot(fpr, tpr, label=name, linewidth=width)
        ax.plot([0, 1], [0, 1], linestyle=":", color="gray", linewidth=0.8)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_title("ROC")
        ax.legend(fontsize=8)
        fig.tight_layout()
        figure_path = out / "roc.png"
        fig.savefig(figure_path, dpi=120)
        plt.close(fig)
        paths["figure"] = figure_path
    return paths


def write_selection_sweep(
    rows: list[tuple[float, int]],
    out_dir: str | Path,
    parameter: str = "eta",
    render_figure: bool = True,
) -> dict[str, Path]:
    """Selection-size curve data plus its figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"selection_sweep_{parameter}.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([parameter, "selected"])
        writer.writerows(rows)
    paths = {"csv": csv_path}
    if render_figure:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot([r[0] for r in rows], [r[1] for r in rows], marker="o", markersize=3)
        ax.set_xlabel(parameter)
        ax.set_ylabel("selected samples")
        ax.set_title(f"selection size vs {parameter}")
        fig.tight_layout()
        figure_path = out / f"selection_sweep_{parameter}.png"
        fig.savefig(figure_path, dpi=120)
        plt.close(fig)
        paths["figure"] = figure_path
    return paths


def write_training_log(
    log: list[dict], out_dir: str | Path, render_figure: bool = True
) -> dict[str, Path]:
    """Structured per-generation log lines and the loss/F1 trajectory figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    with log_path.open("w", encoding="utf-8") as f:
        for row in log:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    paths = {"log": log_path}
    if render_figure and log:
        generations = [row["generation"] for row in log]
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
        ax1.plot(generations, [row["final_loss"] for row in log], marker="o", markersize=3)
        ax1.set_xlabel("generation")
        ax1.set_ylabel("final training loss")
        ax2.plot(generations, [row["val_micro_f1"] for row in log], marker="o",
                 markersize=3, color="tab:green")
        ax2.set_xlabel("generation")
        ax2.set_ylabel("validation micro-F1")
        for ax in (ax1, ax2):
            ax.set_xticks(generations)
        fig.tight_layout()
        figure_path = out / "train_history.png"
        fig.savefig(figure_path, dpi=120)
        plt.close(fig)
        paths["figure"] = figure_path
    return paths


def write_fold_figure(report: MetricsReport, out_dir: str | Path) -> Path | None:
    if not report.folds:
        return None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = list(report.fold_mean.keys())
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.arange(len(metrics))
    means = [report.fold_mean[m] for m in metrics]
    sds = [report.fold_std.get(m, 0.0) for m in metrics]
    ax.bar(x, means, yerr=sds, capsize=4, color="tab:blue", alpha=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(metrics, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(f"cross-validation over {len(report.folds)} folds")
    fig.tight_layout()
    path = out / "cv_metrics.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
