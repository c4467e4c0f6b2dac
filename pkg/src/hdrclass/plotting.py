"""Figures written next to evaluation and training reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_confusion(counts, class_names, path, title="Confusion matrix"):
    counts = np.asarray(counts)
    t = counts.shape[0]
    names = list(class_names) or [str(i) for i in range(t)]
    fig, ax = plt.subplots(figsize=(1.2 * t + 2.5, 1.2 * t + 2))
    rows = counts.sum(axis=1, keepdims=True)
    frac = np.divide(counts, rows, out=np.zeros(counts.shape, dtype=float), where=rows > 0)
    im = ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
    for i in range(t):
        for j in range(t):
            ax.text(j, i, str(counts[i, j]), ha="center", va="center", color="white" if frac[i, j] > 0.5 else "black", fontsize=8)
    ax.set_xticks(range(t), names, rotation=45, ha="right")
    ax.set_yticks(range(t), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046, label="row fraction")
    _save(fig, path)


def plot_history(history, path):
    epochs = [e.epoch for e in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [e.loss for e in history], color="tab:red")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss")
    ax1.set_yscale("log")
    ax2.plot(epochs, [e.train_acc for e in history], label="train")
    test = [e.test_acc for e in history]
    if any(a is not None for a in test):
        ax2.plot(epochs, [np.nan if a is None else a for a in test], label="held-out")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.legend(frameon=False)
    _save(fig, path)


def plot_folds(reports, path):
    keys = ("accuracy", "macro_precision", "macro_recall", "macro_f1")
    k = len(reports)
    width = 0.8 / len(keys)
    fig, ax = plt.subplots(figsize=(max(5, 0.7 * k + 2), 3.5))
    x = np.arange(k)
    for i, key in enumerate(keys):
        ax.bar(x + (i - 1.5) * width, [getattr(r, key) for r in reports], width, label=key.replace("macro_", ""))
    ax.set_xticks(x, [str(i + 1) for i in range(k)])
    ax.set_xlabel("fold")
    lo = min(getattr(r, key) for r in reports for key in keys)
    ax.set_ylim(max(0.0, lo - 0.05), 1.0)
    ax.legend(frameon=False, ncol=4, fontsize=8, loc="lower center")
    _save(fig, path)


def plot_sweep(rows, path):
    """Accuracy heatmap over the (S, D) grid."""
    s_vals = sorted({r["s"] for r in rows})
    d_vals = sorted({r["d"] for r in rows})
    acc = np.full((len(s_vals), len(d_vals)), np.nan)
    for r in rows:
        acc[s_vals.index(r["s"]), d_vals.index(r["d"])] = r["accuracy"]
    fig, ax = plt.subplots(figsize=(1.1 * len(d_vals) + 2.5, 1.0 * len(s_vals) + 1.8))
    im = ax.imshow(acc, cmap="viridis", aspect="auto")
    for i in range(len(s_vals)):
        for j in range(len(d_vals)):
            ax.text(j, i, f"{acc[i, j]:.4f}", ha="center", va="center", color="white", fontsize=8)
    ax.set_xticks(range(len(d_vals)), d_vals)
    ax.set_yticks(range(len(s_vals)), s_vals)
    ax.set_xlabel("D (embedding dim)")
    ax.set_ylabel("S (memory rows)")
    fig.colorbar(im, ax=ax, label="accuracy")
    _save(fig, path)
