"""Report figures written next to the JSON/CSV outputs.

Uses the object-oriented matplotlib API so nothing depends on the active
backend or on pyplot's global state.
"""

import functools
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.figure import Figure

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}


def _styled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with mpl.rc_context(STYLE):
            return fn(*args, **kwargs)

    return wrapper


def _figure(width=4.5, height=4.0):
    return Figure(figsize=(width, height), dpi=120, layout="constrained")


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    return path


def figure_paths(report_path):
    """``run/report.json`` -> ``run/report.roc.png``, ``run/report.confusion.png``."""
    p = Path(report_path)
    stem = p.with_suffix("")
    return {
        "roc": stem.with_name(stem.name + ".roc.png"),
        "confusion": stem.with_name(stem.name + ".confusion.png"),
    }


@_styled
def plot_roc(report, path):
    fig = _figure()
    ax = fig.add_subplot()
    ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
    for name, curve in report.roc.items():
        if name == "micro":
            continue
        ax.plot(curve.fpr, curve.tpr, lw=1.0, label=f"{name} ({curve.auc:.3f})")
    if "micro" in report.roc:
        curve = report.roc["micro"]
        ax.plot(curve.fpr, curve.tpr, color="k", lw=1.6, label=f"micro ({curve.auc:.3f})")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    title = "ROC"
    if report.macro_auc is not None:
        title += f"  macro AUC {report.macro_auc:.3f}"
    ax.set_title(title)
    ax.legend(loc="lower right", frameon=False)
    return _save(fig, path)


@_styled
def plot_confusion(report, path):
    cm = np.asarray(report.confusion_matrix, dtype=float)
    rows = cm.sum(axis=1, keepdims=True)
    frac = np.divide(cm, rows, out=np.zeros_like(cm), where=rows > 0)
    n = len(cm)
    fig = _figure(1.2 + 0.7 * n, 1.0 + 0.7 * n)
    ax = fig.add_subplot()
    im = ax.imshow(frac, vmin=0, vmax=1, cmap="Blues")
    for i in range(n):
        for j in range(n):
            ax.text(j, i, f"{int(cm[i, j])}", ha="center", va="center",
                    color="white" if frac[i, j] > 0.5 else "black", fontsize=8)
    names = report.class_names or [str(i) for i in range(n)]
    ax.set_xticks(range(n), names, rotation=45, ha="right")
    ax.set_yticks(range(n), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"micro TPR {report.micro_tpr:.3f}")
    fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, path)


@_styled
def plot_losses(record, path):
    fig = _figure(5.0, 3.2)
    ax = fig.add_subplot()
    for f in record.folds:
        epochs = np.arange(1, f.epochs + 1)
        line, = ax.plot(epochs, f.train_losses, lw=1.0, label=f"fold {f.fold}")
        ax.plot(epochs, f.val_losses, lw=1.0, ls="--", color=line.get_color())
        ax.plot([f.best_epoch], [f.best_val_loss], "o", ms=3, color=line.get_color())
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss (solid train, dashed validation)")
    ax.set_yscale("log")
    ax.legend(frameon=False, ncol=2)
    return _save(fig, path)


@_styled
def plot_augment_preview(original, augmented, channel_names, path, max_channels=4):
    n = min(max_channels, len(original))
    fig = _figure(6.0, 1.2 + 1.0 * n)
    axes = fig.subplots(n, 1, sharex=True, squeeze=False)[:, 0]
    for i, ax in enumerate(axes):
        ax.plot(original[i], color="0.6", lw=0.7, label="original")
        ax.plot(augmented[i], color="C3", lw=0.7, label="augmented")
        ax.set_ylabel(channel_names[i] if i < len(channel_names) else f"ch{i}", fontsize=7)
    axes[0].legend(frameon=False, ncol=2, loc="upper right")
    axes[-1].set_xlabel("sample")
    return _save(fig, path)
