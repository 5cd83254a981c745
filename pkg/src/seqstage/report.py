"""Figure rendering for the CLI report paths.

Every plotting command saves a PNG next to its delimited output: hypnograms
for predictions, a heatmap for confusion matrices, per-channel curves for
learned filterbanks, and loss/accuracy curves for training logs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .model import STAGES

# Classic hypnogram ordering: wake on top, deep sleep at the bottom.
_HYPNOGRAM_ROW = {"W": 4, "REM": 3, "N1": 2, "N2": 1, "N3": 0}


def figure_path(output_path) -> Path:
    return Path(output_path).with_suffix(".png")


def _stage_curve(labels: np.ndarray) -> np.ndarray:
    return np.array([_HYPNOGRAM_ROW[STAGES[int(s)]] for s in labels])


def save_hypnogram_figure(path, predicted: np.ndarray, reference: np.ndarray | None = None,
                          title: str = "hypnogram") -> Path:
    path = Path(path)
    n_rows = 2 if reference is not None else 1
    fig, axes = plt.subplots(n_rows, 1, figsize=(10, 2.2 * n_rows), sharex=True, squeeze=False)
    series = [("predicted", predicted, "tab:blue")]
    if reference is not None:
        series.append(("reference", reference, "tab:green"))
    for ax, (label, stages, color) in zip(axes[:, 0], series):
        ax.step(np.arange(len(stages)), _stage_curve(stages), where="post", color=color, lw=1.0)
        ax.set_yticks([_HYPNOGRAM_ROW[s] for s in STAGES])
        ax.set_yticklabels(STAGES)
        ax.set_ylabel(label)
        ax.set_ylim(-0.5, 4.5)
    axes[-1, 0].set_xlabel("epoch index")
    axes[0, 0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_confusion_figure(path, cm: np.ndarray, title: str = "confusion matrix") -> Path:
    path = Path(path)
    cm = np.asarray(cm)
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(STAGES)), STAGES)
    ax.set_yticks(range(len(STAGES)), STAGES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("reference")
    ax.set_title(title)
    threshold = cm.max() / 2.0 if cm.max() else 0.5
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(int(cm[i, j])), ha="center", va="center",
                    color="white" if cm[i, j] > threshold else "black", fontsize=9)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_filterbank_figure(path, effective_weights: list[np.ndarray],
                           title: str = "learned filterbanks") -> Path:
    """One panel per channel; each curve is one filter over the frequency bins."""
    path = Path(path)
    n_chan = len(effective_weights)
    fig, axes = plt.subplots(n_chan, 1, figsize=(9, 2.4 * n_chan), sharex=True, squeeze=False)
    for c, (ax, weights) in enumerate(zip(axes[:, 0], effective_weights)):
        for m in range(weights.shape[1]):
            ax.plot(weights[:, m], lw=0.8)
        ax.set_ylabel(f"channel {c}")
    axes[-1, 0].set_xlabel("frequency bin")
    axes[0, 0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_training_figure(path, history: list[dict], title: str = "training") -> Path:
    path = Path(path)
    steps = [row["step"] for row in history]
    losses = [row["train_loss"] for row in history]
    val_points = [(row["step"], row["valid_accuracy"]) for row in history
                  if row.get("valid_accuracy") is not None]
    fig, ax_loss = plt.subplots(figsize=(8, 4))
    ax_loss.plot(steps, losses, color="tab:blue", lw=0.9, label="train loss")
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("train loss", color="tab:blue")
    if val_points:
        ax_acc = ax_loss.twinx()
        ax_acc.plot(*zip(*val_points), color="tab:orange", marker="o", lw=1.0,
                    label="valid accuracy")
        ax_acc.set_ylabel("valid accuracy", color="tab:orange")
        ax_acc.set_ylim(0.0, 1.0)
    ax_loss.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
