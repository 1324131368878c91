"""CSV emission and figure rendering for run reports.

Every report artifact comes in two forms written side by side: a delimited
file for downstream tooling and a rendered PNG for eyeballs. Figures use the
Agg backend so runs work headless.
"""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import RunReport, SeedRun


def curve_rows(report):
    """(seed, epoch, split, loss) rows; validation rows only when a
    validation split existed."""
    rows = []
    for run in report.runs:
        for epoch, loss in enumerate(run.train_losses, start=1):
            rows.append((run.seed, epoch, "train", loss))
        for epoch, loss in enumerate(run.val_losses, start=1):
            rows.append((run.seed, epoch, "validation", loss))
    return rows


def write_curves_csv(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "epoch", "split", "loss"])
        for row in curve_rows(report):
            writer.writerow([row[0], row[1], row[2], repr(row[3])])


def plot_curves(report, path):
    """Loss curves, one line per seed per split; training curves sit below
    their validation counterparts once the model starts to fit."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run in report.runs:
        epochs = range(1, len(run.train_losses) + 1)
        ax.plot(epochs, run.train_losses, color="tab:blue", alpha=0.7, linewidth=1.2)
        if run.val_losses:
            ax.plot(
                range(1, len(run.val_losses) + 1),
                run.val_losses,
                color="tab:orange",
                alpha=0.7,
                linewidth=1.2,
                linestyle="--",
            )
    ax.plot([], [], color="tab:blue", label="train")
    if any(run.val_losses for run in report.runs):
        ax.plot([], [], color="tab:orange", linestyle="--", label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss per example")
    ax.set_title(f"{report.task} on {report.dataset}")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_metrics_csv(report, path):
    """Per-seed final metrics: seed, task, dataset, metric, value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "task", "dataset", "metric", "value"])
        for run in report.runs:
            for metric, value in run.metrics.items():
                writer.writerow([run.seed, report.task, report.dataset, metric, repr(value)])


def write_probe_csv(rows, path, metric_name):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "metric", "score"])
        for layer, score in rows:
            writer.writerow([layer, metric_name, repr(score)])


def plot_probe(rows, path, metric_name):
    """Per-layer probe scores, layer 0 being the embedding output."""
    fig, ax = plt.subplots(figsize=(6, 4))
    layers = [layer for layer, _ in rows]
    scores = [score for _, score in rows]
    ax.plot(layers, scores, marker="o", color="tab:green")
    ax.set_xticks(layers)
    ax.set_xlabel("encoder layer")
    ax.set_ylabel(metric_name)
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("linear-probe score by layer")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_report_json(report, path):
    payload = {
        "task": report.task,
        "dataset": report.dataset,
        "runs": [
            {
                "seed": run.seed,
                "train_losses": run.train_losses,
                "val_losses": run.val_losses,
                "metrics": run.metrics,
            }
            for run in report.runs
        ],
        "aggregates": {
            metric: {"mean": mean, "sd": sd}
            for metric, (mean, sd) in report.aggregates().items()
        },
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_report_json(path):
    payload = json.loads(Path(path).read_text())
    report = RunReport(task=payload["task"], dataset=payload["dataset"])
    for run in payload["runs"]:
        report.runs.append(
            SeedRun(run["seed"], run["train_losses"], run["val_losses"], run["metrics"])
        )
    return report


def write_predictions_jsonl(predictions, path):
    with open(path, "w", encoding="utf-8") as fh:
        for record in predictions:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
