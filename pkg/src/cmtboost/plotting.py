"""PNG figures for training and evaluation reports.

The Agg backend is forced so figures render headless. Every figure is drawn
inside an ``rc_context`` built from :data:`STYLE` and written atomically.
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import atomic_write_bytes  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
FIG_WIDTH = 4.5
CLASS_COLORS = {0: "#2b8cbe", 1: "#d7301f"}
CLASS_NAMES = {0: "benign", 1: "malignant"}

STYLE = {
    "figure.figsize": [FIG_WIDTH, FIG_WIDTH * GOLDEN * 1.2],
    "figure.dpi": 120,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.4,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(Path(path), buf.getvalue())


def plot_roc(roc, auc: float, path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(roc.x, roc.y, color=CLASS_COLORS[1], label=f"ROC (AUC = {auc:.4f})")
        ax.plot([0, 1], [0, 1], color="0.6", linestyle="--", linewidth=0.8, label="chance")
        ax.set(xlabel="False positive rate", ylabel="True positive rate",
               xlim=(-0.01, 1.01), ylim=(-0.01, 1.01), title="ROC curve")
        ax.legend(loc="lower right")
        _save(fig, path)


def plot_pr(pr, auc: float, positive_rate: float, path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.step(pr.x, pr.y, where="post", color=CLASS_COLORS[1], label=f"PR (AUC = {auc:.4f})")
        ax.axhline(positive_rate, color="0.6", linestyle="--", linewidth=0.8, label="prevalence")
        ax.set(xlabel="Recall", ylabel="Precision", xlim=(-0.01, 1.01), ylim=(-0.01, 1.05),
               title="Precision-recall curve")
        ax.legend(loc="lower left")
        _save(fig, path)


def plot_pca(projections: np.ndarray, labels: Sequence[int], explained: Sequence[float], path) -> None:
    labels = np.asarray(labels)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        y = projections[:, 1] if projections.shape[1] > 1 else np.zeros(len(projections))
        for cls in (0, 1):
            sel = labels == cls
            ax.scatter(projections[sel, 0], y[sel], s=14, alpha=0.8, color=CLASS_COLORS[cls],
                       label=CLASS_NAMES[cls], edgecolors="none")
        ax.set_xlabel(f"PC1 ({100 * explained[0]:.1f}% var)")
        ax.set_ylabel(f"PC2 ({100 * explained[1]:.1f}% var)" if len(explained) > 1 else "")
        ax.set_title("Penultimate features, PCA")
        ax.legend()
        _save(fig, path)


def plot_history(history: Sequence[dict], path) -> None:
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True,
                                       figsize=(FIG_WIDTH, FIG_WIDTH * GOLDEN * 1.8))
        ax1.plot(epochs, [r["train_loss"] for r in history], label="train loss")
        ax1.plot(epochs, [r["val_loss"] for r in history], label="val loss")
        ax1.set_ylabel("Cross-entropy")
        ax1.legend()
        ax2.plot(epochs, [r["train_acc"] for r in history], label="train acc")
        ax2.plot(epochs, [r["val_acc"] for r in history], label="val acc")
        ax2.plot(epochs, [r["val_f1"] for r in history], label="val F1", linestyle=":")
        ax2.set(xlabel="Epoch", ylabel="Percent", ylim=(-2, 102))
        ax2.legend(loc="lower right")
        _save(fig, path)
