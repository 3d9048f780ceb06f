"""Figures for the report subcommand, written to files with the Agg backend."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_confusion(cm, path, title="confusion matrix"):
    m = cm.matrix
    n = m.shape[0]
    fig, ax = plt.subplots(figsize=(1.5 + 0.25 * n, 1.2 + 0.25 * n))
    im = ax.imshow(m, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xlabel("predicted class")
    ax.set_ylabel("true class")
    ax.set_title(title)
    ticks = np.arange(n)
    ax.set_xticks(ticks, [str(t + 1) for t in ticks], fontsize=6)
    ax.set_yticks(ticks, [str(t + 1) for t in ticks], fontsize=6)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    _save(fig, path)


def plot_history(history, path, title="training"):
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(history.epochs, history.loss, color="tab:blue", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    acc = [a for a in history.accuracy if a is not None]
    if acc:
        ax2 = ax.twinx()
        ax2.plot([e for e, a in zip(history.epochs, history.accuracy) if a is not None], acc,
                 color="tab:orange", label="test accuracy")
        ax2.set_ylim(0.0, 1.0)
        ax2.set_ylabel("accuracy")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_accuracy_bars(rows, path, title="accuracy"):
    """``rows``: list of (label, accuracy)."""
    labels = [r[0] for r in rows]
    values = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(1.5 + 0.9 * len(rows), 3))
    ax.bar(range(len(rows)), values, color="tab:green")
    ax.set_xticks(range(len(rows)), labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("accuracy")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
