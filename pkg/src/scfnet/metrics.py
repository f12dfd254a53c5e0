"""Evaluation metrics: confusion matrix, micro TPR, ROC/AUC (per class, macro, micro)."""

import csv
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .core import Dataset, ValidationError


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


@dataclass
class EvalReport:
    confusion_matrix: List[List[int]]
    micro_tpr: float
    per_class_tpr: List[Optional[float]]
    per_class_auc: List[Optional[float]]
    macro_auc: Optional[float]
    micro_auc: Optional[float]
    n_samples: int
    class_names: List[str] = field(default_factory=list)
    skipped_classes: List[str] = field(default_factory=list)
    roc: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("roc")
        return d


def argmax_predictions(probs) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return np.argmax(np.asarray(probs), axis=1)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValidationError(f"label length mismatch: {y_true.shape} vs {y_pred.shape}")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValidationError(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def micro_tpr(cm) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise ValidationError("micro TPR of an empty confusion matrix is undefined")
    # sum TP_i / (sum TP_i + sum FN_i); the denominator is every sample
    return float(np.trace(cm) / total)


def per_class_tpr(cm) -> List[Optional[float]]:
    cm = np.asarray(cm)
    rows = cm.sum(axis=1)
    return [float(cm[i, i] / rows[i]) if rows[i] else None for i in range(len(cm))]


def roc_curve(y_true, scores) -> RocCurve:
    """ROC over every distinct score threshold, highest first.

    Tied scores move the curve diagonally, so the trapezoid area equals the
    probability that a random positive outranks a random negative with ties
    counted as one half.
    """
    y = np.asarray(y_true).astype(bool).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise ValidationError("truth and score vectors differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC is undefined unless both classes are present")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    # last index of each run of equal scores
    cut = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), y.size - 1]
    tp = np.cumsum(y_sorted)[cut]
    fp = (cut + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s_sorted[cut]]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def roc_auc(y_true, scores) -> float:
    return roc_curve(y_true, scores).auc


def _check_probs(probs, labels):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ValidationError("probabilities must be [n_samples, n_classes] matching the labels")
    return probs, labels


def per_class_auc(probs, labels) -> List[Optional[float]]:
    """One-vs-rest AUC per class; ``None`` where a class lacks positives or negatives."""
    probs, labels = _check_probs(probs, labels)
    out = []
    for c in range(probs.shape[1]):
        truth = labels == c
        if truth.all() or not truth.any():
            out.append(None)
        else:
            out.append(roc_auc(truth, probs[:, c]))
    return out


def macro_auc(probs, labels) -> float:
    aucs = per_class_auc(probs, labels)
    usable = [a for a in aucs if a is not None]
    if not usable:
        raise ValidationError("no class has both positive and negative samples")
    if len(usable) < len(aucs):
        skipped = [i for i, a in enumerate(aucs) if a is None]
        warnings.warn(f"macro AUC skips classes without both outcomes: {skipped}", RuntimeWarning)
    return float(np.mean(usable))


def micro_roc(probs, labels) -> RocCurve:
    """ROC over the pooled one-vs-rest (sample, class) instances."""
    probs, labels = _check_probs(probs, labels)
    truth = labels[:, None] == np.arange(probs.shape[1])[None, :]
    return roc_curve(truth.ravel(), probs.ravel())


def micro_auc(probs, labels) -> float:
    return micro_roc(probs, labels).auc


def build_report(probs, labels, class_names: List[str]) -> EvalReport:
    probs, labels = _check_probs(probs, labels)
    n_classes = len(class_names)
    cm = confusion_matrix(labels, argmax_predictions(probs), n_classes)
    aucs = per_class_auc(probs, labels) if len(labels) else [None] * n_classes
    usable = [a for a in aucs if a is not None]
    roc = {}
    micro = None
    try:
        curve = micro_roc(probs, labels)
        micro = curve.auc
        roc["micro"] = curve
    except ValidationError:
        pass
    for c, name in enumerate(class_names):
        if aucs[c] is not None:
            roc[name] = roc_curve(labels == c, probs[:, c])
    return EvalReport(
        confusion_matrix=cm.tolist(),
        micro_tpr=micro_tpr(cm) if len(labels) else 0.0,
        per_class_tpr=per_class_tpr(cm),
        per_class_auc=aucs,
        macro_auc=float(np.mean(usable)) if usable else None,
        micro_auc=micro,
        n_samples=int(len(labels)),
        class_names=list(class_names),
        skipped_classes=[class_names[i] for i, a in enumerate(aucs) if a is None],
        roc=roc,
    )


def predict_proba(params, dataset: Dataset, batch_size: int = 64) -> np.ndarray:
    """Evaluation-mode softmax probabilities, ``[n_segments, n_classes]``."""
    import torch

    from .model import module_from_params

    if dataset.n_channels != params.config.n_channels:
        raise ValidationError(
            f"dataset has {dataset.n_channels} channels, model head expects {params.config.n_channels}"
        )
    if dataset.window_samples != params.config.window_samples:
        raise ValidationError(
            f"dataset windows are {dataset.window_samples} samples, model expects "
            f"{params.config.window_samples}"
        )
    x, _ = dataset.arrays()
    model = module_from_params(params)
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            logits = model(torch.from_numpy(x[i:i + batch_size]))
            out.append(torch.softmax(logits.double(), dim=1).numpy())
    if not out:
        return np.zeros((0, params.config.n_classes))
    return np.concatenate(out)


def evaluate(params, dataset: Dataset) -> EvalReport:
    """Forward ``dataset`` through the model without augmentation and score it."""
    if dataset.n_classes != params.config.n_classes:
        raise ValidationError(
            f"dataset has {dataset.n_classes} classes, model predicts {params.config.n_classes}"
        )
    probs = predict_proba(params, dataset)
    return build_report(probs, dataset.hard_labels(), dataset.class_names)


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr"])
        for f, t in curve.points:
            w.writerow([repr(f), repr(t)])
