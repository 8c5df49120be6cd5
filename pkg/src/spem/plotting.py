"""Figure rendering for reports: confusion heatmaps and frame montages."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def confusion_figure(confusion, class_names=None, path=None, title=None):
    """Heatmap with counts, rows true and columns predicted."""
    confusion = np.asarray(confusion)
    c = confusion.shape[0]
    names = list(class_names or [str(k) for k in range(c)])
    fig, ax = plt.subplots(figsize=(1.2 * c + 2.5, 1.1 * c + 2.0))
    rows = confusion.sum(axis=1, keepdims=True)
    frac = confusion / np.maximum(rows, 1)
    im = ax.imshow(frac, cmap="Blues", vmin=0.0, vmax=1.0)
    for i in range(c):
        for k in range(c):
            ax.text(k, i, str(int(confusion[i, k])), ha="center", va="center",
                    color="white" if frac[i, k] > 0.5 else "black", fontsize=9)
    ax.set_xticks(range(c), labels=names, rotation=40, ha="right")
    ax.set_yticks(range(c), labels=names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046, label="row fraction")
    fig.tight_layout()
    return _finish(fig, path)


def montage_figure(frames, timestamps=None, path=None, title=None, vmax=None):
    """One panel per frame of a stream, shared colour scale."""
    frames = np.asarray(frames)
    if frames.ndim == 4:
        frames = frames[..., 0]
    j = len(frames)
    cols = min(j, 5)
    rows = -(-j // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2.1 * cols, 2.3 * rows), squeeze=False)
    vmax = vmax or max(int(frames.max()), 1)
    for k, ax in enumerate(axes.flat):
        ax.axis("off")
        if k >= j:
            continue
        ax.imshow(frames[k], cmap="magma", vmin=0, vmax=vmax, interpolation="nearest")
        if timestamps is not None:
            ax.set_title(f"t={timestamps[k]:.1f} s", fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _finish(fig, path)


def history_figure(history, path=None, title=None):
    """Loss and accuracy curves from a list of epoch records."""
    epochs = [r.epoch for r in history]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.2))
    a1.plot(epochs, [r.loss for r in history])
    a1.set_xlabel("epoch")
    a1.set_ylabel("training loss")
    a2.plot(epochs, [r.train_acc for r in history], label="train")
    a2.plot(epochs, [r.val_acc for r in history], label="validation")
    a2.set_xlabel("epoch")
    a2.set_ylabel("accuracy")
    a2.set_ylim(0, 1.02)
    a2.legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _finish(fig, path)


def _finish(fig, path):
    if path is None:
        return fig
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return Path(path)
