"""Figure rendering for the report-producing stages.

Every plotting helper writes a PNG next to the stage's delimited output and
returns the path. Rendering uses the Agg backend so the CLI works headless.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricReport


def plot_loss_curve(losses: list[float], path) -> str:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(range(1, len(losses) + 1), losses, lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.set_title("Training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_roc(labels, scores, path) -> str:
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    sorted_labels = labels[order]
    n_pos = max(int((labels == 1).sum()), 1)
    n_neg = max(int((labels == 0).sum()), 1)
    tpr = np.concatenate([[0.0], np.cumsum(sorted_labels == 1) / n_pos])
    fpr = np.concatenate([[0.0], np.cumsum(sorted_labels == 0) / n_neg])
    fig, ax = plt.subplots(figsize=(3.6, 3.6))
    ax.plot(fpr, tpr, lw=1.5)
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="gray")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("ROC")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_score_hist(labels, scores, path) -> str:
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    bins = np.linspace(0, 1, 21)
    ax.hist(scores[labels == 0], bins=bins, alpha=0.6, label="benign")
    ax.hist(scores[labels == 1], bins=bins, alpha=0.6, label="malware")
    ax.set_xlabel("score")
    ax.set_ylabel("apps")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_metric_series(report: MetricReport, path) -> str:
    if report.periods is None or report.series is None:
        raise ValueError("report has no per-period series")
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    for name, values in report.series.items():
        ax.plot(report.periods, values, marker="o", ms=3, lw=1.2, label=name)
    ax.set_xlabel("period")
    ax.set_ylabel("metric")
    ax.set_ylim(-0.02, 1.02)
    ax.tick_params(axis="x", rotation=45)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_stats(stats: dict[str, list[dict]], path, top: int = 8) -> str:
    classes = [cls for cls, rows in stats.items() if rows]
    if not classes:
        classes = list(stats)
    n = len(classes)
    cols = 2
    rows_n = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows_n, cols, figsize=(11, 2.8 * rows_n), squeeze=False)
    for k, cls in enumerate(classes):
        ax = axes[k // cols][k % cols]
        rows = stats[cls][:top]
        tokens = [r["token"] if len(r["token"]) <= 28 else r["token"][-28:] for r in rows]
        y = np.arange(len(rows))
        ax.barh(y - 0.2, [r["benign_count"] for r in rows], height=0.4, label="benign")
        ax.barh(y + 0.2, [r["malware_count"] for r in rows], height=0.4, label="malware")
        ax.set_yticks(y)
        ax.set_yticklabels(tokens, fontsize=7)
        ax.invert_yaxis()
        ax.set_title(cls, fontsize=9)
        if k == 0:
            ax.legend(fontsize=8)
    for k in range(n, rows_n * cols):
        axes[k // cols][k % cols].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
