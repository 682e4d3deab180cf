"""Figure rendering for the report path: every evaluation writes a
confusion-matrix heatmap and (when scores exist) a ROC curve next to its
JSON/text output, training writes loss/accuracy curves, and the comparison
report gets a grouped bar chart."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvaluationReport
from .train import TrainingHistory


def confusion_figure(report: EvaluationReport, path: Path | str) -> None:
    counts = report.confusion.as_array()
    names = report.confusion.class_names
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(counts, cmap="Blues")
    for i in range(2):
        for j in range(2):
            color = "white" if counts[i, j] > counts.max() / 2 else "black"
            ax.text(j, i, f"{counts[i, j]:,}", ha="center", va="center", color=color)
    ax.set_xticks([0, 1], names)
    ax.set_yticks([0, 1], names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"accuracy {report.accuracy:.4f}")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def roc_figure(points: list[tuple[float, float, float]], auc: float, path: Path | str) -> None:
    fpr = [p[1] for p in points]
    tpr = [p[2] for p in points]
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    ax.plot(fpr, tpr, lw=1.8, label=f"AUC = {auc:.3f}")
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="gray")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def training_curves(histories: list[TrainingHistory], path: Path | str) -> None:
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(8.4, 3.4))
    offset = 0
    for phase, history in enumerate(histories):
        epochs = [offset + r.epoch for r in history.epochs]
        suffix = f" (phase {phase + 1})" if len(histories) > 1 else ""
        ax_loss.plot(epochs, [r.train_loss for r in history.epochs], label="train" + suffix)
        ax_loss.plot(epochs, [r.val_loss for r in history.epochs], ls="--", label="val" + suffix)
        ax_acc.plot(epochs, [r.train_acc for r in history.epochs], label="train" + suffix)
        ax_acc.plot(epochs, [r.val_acc for r in history.epochs], ls="--", label="val" + suffix)
        offset = epochs[-1]
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=8)
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def comparison_figure(rows: list[dict], path: Path | str) -> None:
    """Grouped bars of the four headline metrics across runs."""
    labels = [row["model"] for row in rows]
    metrics = ("accuracy", "precision", "recall", "f1")
    x = np.arange(len(rows))
    width = 0.2
    fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * len(rows)), 3.8))
    for k, metric in enumerate(metrics):
        ax.bar(x + (k - 1.5) * width, [row[metric] for row in rows], width, label=metric)
    ax.set_xticks(x, labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8, ncols=4)
    ax.set_ylabel("score")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
