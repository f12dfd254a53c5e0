"""Losses, patient-grouped K-fold training with early stopping, and head-only transfer."""

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugmentConfig, augment_batch
from .checkpoint import load_extractor_only, save_checkpoint
from .core import Dataset, ValidationError, check_dataset
from .metrics import build_report
from .model import ModelConfig, ModelParams, init_params, module_from_params, params_from_module
from .preprocess import soft_labels

log = logging.getLogger(__name__)

LOSSES = ("kl_soft", "cross_entropy")


class TrainingDiverged(RuntimeError):
    pass


def default_augment(window_samples: int) -> AugmentConfig:
    """Stock augmentation; the time-out ceiling is 2000 samples or a fifth of the window, whichever is smaller."""
    return AugmentConfig(timeout_range=(0, min(2000, window_samples // 5)))


@dataclass
class TrainConfig:
    loss: str = "kl_soft"
    max_epochs: int = 20
    early_stop_patience: int = 2
    batch_size: int = 32
    learning_rate: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    k_folds: int = 5
    seed: int = 0
    freeze_extractor: bool = False
    augment: Optional[AugmentConfig] = None
    use_augment: bool = True
    jobs: int = 1

    def validate(self):
        if self.loss not in LOSSES:
            raise ValidationError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.k_folds < 2:
            raise ValidationError("k_folds must be >= 2")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if self.early_stop_patience < 1:
            raise ValidationError("early_stop_patience must be >= 1")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        return self


@dataclass
class FoldAssignment:
    patients: List[List[str]]
    segments: List[List[str]]

    @property
    def k(self) -> int:
        return len(self.patients)


@dataclass
class FoldRecord:
    fold: int
    train_losses: List[float]
    val_losses: List[float]
    epochs: int
    best_epoch: int
    best_val_loss: float
    val_micro_tpr: float
    val_macro_auc: Optional[float]
    val_micro_auc: Optional[float]
    n_train: int
    n_val: int
    val_patients: List[str]
    checkpoint: Optional[str] = None


@dataclass
class RunRecord:
    folds: List[FoldRecord]
    total_epochs: int
    micro_tpr: float
    macro_auc: Optional[float]
    micro_auc: Optional[float]
    seed: int
    model_config: dict
    train_config: dict
    # in-memory only
    params: List[ModelParams] = field(default_factory=list, repr=False)
    val_probs: Optional[np.ndarray] = field(default=None, repr=False)
    val_labels: Optional[np.ndarray] = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "folds": [asdict(f) for f in self.folds],
            "total_epochs": self.total_epochs,
            "micro_tpr": self.micro_tpr,
            "macro_auc": self.macro_auc,
            "micro_auc": self.micro_auc,
            "seed": self.seed,
            "model_config": self.model_config,
            "train_config": self.train_config,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


def _as_tensor(x, dtype=None):
    t = torch.as_tensor(x)
    return t if dtype is None else t.to(dtype)


def kl_div_loss(target, logits) -> torch.Tensor:
    """Batch mean of ``sum_i p_i * log(p_i / q_i)`` with ``q = softmax(logits)``; ``0 * log 0 = 0``."""
    logits = _as_tensor(logits)
    target = _as_tensor(target, logits.dtype)
    if not torch.isfinite(logits).all():
        raise ValidationError("non-finite logits")
    if target.shape != logits.shape:
        raise ValidationError(f"target shape {tuple(target.shape)} != logits shape {tuple(logits.shape)}")
    log_q = F.log_softmax(logits, dim=1)
    per_sample = (torch.xlogy(target, target) - target * log_q).sum(dim=1)
    return per_sample.mean()


def cross_entropy_loss(target, logits) -> torch.Tensor:
    """Batch mean of ``-log softmax(logits)[target]`` (categorical form)."""
    logits = _as_tensor(logits)
    target = _as_tensor(target, torch.int64)
    n = logits.shape[1]
    if target.numel() and (target.min() < 0 or target.max() >= n):
        raise ValidationError(f"class index out of range for {n} classes")
    return F.cross_entropy(logits, target)


def soft_cross_entropy(target, logits) -> torch.Tensor:
    logits = _as_tensor(logits)
    target = _as_tensor(target, logits.dtype)
    return -(target * F.log_softmax(logits, dim=1)).sum(dim=1).mean()


def entropy(target) -> torch.Tensor:
    target = _as_tensor(target)
    return -torch.xlogy(target, target).sum(dim=1).mean()


def patient_kfold(dataset: Dataset, k: int, seed: int) -> FoldAssignment:
    """Split by patient: shuffle, then place patients largest-first into the lightest fold."""
    counts: Dict[str, int] = {}
    for s in dataset.segments:
        counts[s.patient_id] = counts.get(s.patient_id, 0) + 1
    patients = sorted(counts)
    if len(patients) < k:
        raise ValidationError(f"{len(patients)} patients cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    shuffled = [patients[i] for i in rng.permutation(len(patients))]
    # stable sort keeps the shuffled order among equally sized patients
    ordered = sorted(shuffled, key=lambda p: -counts[p])
    folds: List[List[str]] = [[] for _ in range(k)]
    load = [0] * k
    for p in ordered:
        target = min(range(k), key=lambda i: (load[i], len(folds[i]), i))
        folds[target].append(p)
        load[target] += counts[p]
    where = {p: i for i, ps in enumerate(folds) for p in ps}
    segs: List[List[str]] = [[] for _ in range(k)]
    for s in dataset.segments:
        segs[where[s.patient_id]].append(s.id)
    return FoldAssignment(patients=folds, segments=segs)


def _targets(dataset: Dataset, loss: str):
    _, votes = dataset.arrays()
    labels = np.argmax(votes, axis=1) if len(votes) else np.zeros(0, dtype=np.int64)
    if loss == "kl_soft":
        return soft_labels(votes).astype(np.float32), labels
    if len(votes) and np.any(votes.sum(axis=1) <= 0):
        raise ValidationError("cross-entropy training needs labeled segments")
    return labels.astype(np.int64), labels


def _loss(loss: str, target, logits):
    if loss == "kl_soft":
        return kl_div_loss(target, logits)
    return cross_entropy_loss(target, logits)


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


@dataclass
class _FoldJob:
    fold: int
    x: np.ndarray
    targets: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    val_patients: List[str]
    class_names: List[str]
    model_config: ModelConfig
    train_config: TrainConfig
    initial: Optional[ModelParams]


def _run_fold(job: _FoldJob):
    cfg = job.train_config
    seed = _fold_seed(cfg.seed, job.fold)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    if job.initial is not None:
        params = job.initial.clone()
    else:
        params = init_params(job.model_config, seed)
    frozen = set(params.frozen)
    if cfg.freeze_extractor:
        frozen |= {n for n in params.tensors if n.startswith("extractor.")}
    model = module_from_params(params)
    trainable = []
    for name, p in model.named_parameters():
        p.requires_grad_(name not in frozen)
        if name not in frozen:
            trainable.append(p)
    freeze_extractor = any(n.startswith("extractor.") for n in frozen)
    opt = torch.optim.Adam(trainable, lr=cfg.learning_rate, betas=tuple(cfg.betas), eps=cfg.eps)
    aug = cfg.augment if cfg.augment is not None else default_augment(job.model_config.window_samples)
    if cfg.use_augment:
        aug.validate(job.model_config.n_channels, job.model_config.window_samples)

    x_val = torch.from_numpy(job.x[job.val_idx])
    t_val = torch.from_numpy(job.targets[job.val_idx])
    train_losses, val_losses = [], []
    best_loss, best_epoch, best_state, best_probs = math.inf, -1, None, None
    stale = 0
    for epoch in range(cfg.max_epochs):
        model.train()
        if freeze_extractor:
            # keeps normalization statistics of a frozen extractor untouched
            model.extractor.eval()
        order = rng.permutation(job.train_idx)
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = job.x[idx]
            if cfg.use_augment:
                xb = augment_batch(xb, aug, rng)
            xb = torch.from_numpy(np.ascontiguousarray(xb, dtype=np.float32))
            tb = torch.from_numpy(job.targets[idx])
            opt.zero_grad()
            loss = _loss(cfg.loss, tb, model(xb))
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"fold {job.fold} epoch {epoch + 1}: non-finite training loss at batch {start // cfg.batch_size}"
                )
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            seen += len(idx)
        train_losses.append(total / max(seen, 1))

        model.eval()
        with torch.no_grad():
            logits = torch.cat([model(x_val[i:i + 256]) for i in range(0, len(x_val), 256)])
            val_loss = float(_loss(cfg.loss, t_val, logits))
            probs = torch.softmax(logits.double(), dim=1).numpy()
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"fold {job.fold} epoch {epoch + 1}: non-finite validation loss")
        val_losses.append(val_loss)
        log.info("fold %d epoch %d train %.4f val %.4f", job.fold, epoch + 1, train_losses[-1], val_loss)
        if val_loss < best_loss:
            best_loss, best_epoch, stale = val_loss, epoch + 1, 0
            best_state = params_from_module(model, job.model_config, frozen)
            best_probs = probs
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break

    labels_val = job.labels[job.val_idx]
    report = build_report(best_probs, labels_val, job.class_names)
    record = FoldRecord(
        fold=job.fold,
        train_losses=train_losses,
        val_losses=val_losses,
        epochs=len(train_losses),
        best_epoch=best_epoch,
        best_val_loss=best_loss,
        val_micro_tpr=report.micro_tpr,
        val_macro_auc=report.macro_auc,
        val_micro_auc=report.micro_auc,
        n_train=int(len(job.train_idx)),
        n_val=int(len(job.val_idx)),
        val_patients=list(job.val_patients),
    )
    return record, best_state, best_probs


def _single_threaded_fold(job):
    torch.set_num_threads(1)
    return _run_fold(job)


def train_model(
    dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    initial: Optional[ModelParams] = None,
    out_dir=None,
) -> RunRecord:
    """K-fold training; each fold keeps its best-validation-loss parameters.

    ``initial`` seeds every fold with the same starting parameters (used for
    transfer).  With ``out_dir`` set, ``fold{i}.ckpt`` and ``record.json`` are
    written there.
    """
    check_dataset(dataset)
    train_config.validate()
    model_config.validate()
    if dataset.n_channels != model_config.n_channels:
        raise ValidationError(
            f"dataset has {dataset.n_channels} channels, model config expects {model_config.n_channels}"
        )
    if dataset.window_samples != model_config.window_samples:
        raise ValidationError(
            f"dataset windows are {dataset.window_samples} samples, model expects {model_config.window_samples}"
        )
    if dataset.n_classes != model_config.n_classes:
        raise ValidationError(
            f"dataset has {dataset.n_classes} classes, model config expects {model_config.n_classes}"
        )
    if initial is not None and initial.config != model_config:
        raise ValidationError("initial parameters were built for a different model config")

    folds = patient_kfold(dataset, train_config.k_folds, train_config.seed)
    x, _ = dataset.arrays()
    targets, labels = _targets(dataset, train_config.loss)
    position = {s.id: i for i, s in enumerate(dataset.segments)}
    fold_idx = [np.asarray([position[s] for s in seg_ids], dtype=np.int64) for seg_ids in folds.segments]
    jobs = []
    for f in range(folds.k):
        train_idx = np.sort(np.concatenate([fold_idx[g] for g in range(folds.k) if g != f]))
        jobs.append(
            _FoldJob(
                fold=f,
                x=x,
                targets=targets,
                labels=labels,
                train_idx=train_idx,
                val_idx=fold_idx[f],
                val_patients=folds.patients[f],
                class_names=list(dataset.class_names),
                model_config=model_config,
                train_config=train_config,
                initial=initial,
            )
        )
    if train_config.jobs > 1:
        with ProcessPoolExecutor(train_config.jobs, mp_context=get_context("spawn")) as pool:
            results = list(pool.map(_single_threaded_fold, jobs))
    else:
        results = [_run_fold(job) for job in jobs]

    fold_records = [r[0] for r in results]
    params = [r[1] for r in results]
    val_probs = np.concatenate([r[2] for r in results])
    val_labels = np.concatenate([labels[fi] for fi in fold_idx])
    pooled = build_report(val_probs, val_labels, dataset.class_names)
    train_snapshot = asdict(train_config)
    if train_config.augment is None:
        train_snapshot["augment"] = asdict(default_augment(model_config.window_samples))
    record = RunRecord(
        folds=fold_records,
        total_epochs=sum(f.epochs for f in fold_records),
        micro_tpr=pooled.micro_tpr,
        macro_auc=pooled.macro_auc,
        micro_auc=pooled.micro_auc,
        seed=train_config.seed,
        model_config=model_config.fingerprint(),
        train_config=train_snapshot,
        params=params,
        val_probs=val_probs,
        val_labels=val_labels,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for fr, p in zip(fold_records, params):
            path = out / f"fold{fr.fold}.ckpt"
            save_checkpoint(p, path)
            fr.checkpoint = str(path)
        record.save(out / "record.json")
    return record


def transfer_head(
    checkpoint_path,
    new_dataset: Dataset,
    new_model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir=None,
) -> RunRecord:
    """Reuse a trained extractor, freeze it, and train only a fresh classifier head."""
    initial = load_extractor_only(checkpoint_path, new_model_config, train_config.seed)
    cfg = TrainConfig(**{**asdict(train_config), "freeze_extractor": True})
    cfg.augment = train_config.augment
    return train_model(new_dataset, new_model_config, cfg, initial=initial, out_dir=out_dir)
