"""Recording -> model-ready dataset: resample, channel selection, windowing,
expert-count filtering, vote normalization and minority oversampling."""

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import Dataset, Recording, Segment, SoftLabel, ValidationError

# the 16 bipolar EEG leads shared by the IIC-Seizure montage (EKG excluded)
EEG16 = [
    "Fp1-F7", "F7-T3", "T3-T5", "T5-O1",
    "Fp1-F3", "F3-C3", "C3-P3", "P3-O1",
    "Fp2-F4", "F4-C4", "C4-P4", "P4-O2",
    "Fp2-F8", "F8-T4", "T4-T6", "T6-O2",
]


@dataclass
class PreprocessConfig:
    target_rate_hz: float = 200.0
    window_seconds: float = 50.0
    channel_selection: List[str] = field(default_factory=list)
    min_expert_votes: int = 10
    oversample: bool = False

    def validate(self):
        if not self.target_rate_hz > 0:
            raise ValidationError("target_rate_hz must be positive")
        if not self.window_seconds > 0:
            raise ValidationError("window_seconds must be positive")
        if len(set(self.channel_selection)) != len(self.channel_selection):
            raise ValidationError("channel_selection contains duplicates")
        return self


def resample(recording: Recording, target_rate_hz: float) -> Recording:
    """Linear-interpolation resampling onto a uniform grid at ``target_rate_hz``."""
    if not target_rate_hz > 0:
        raise ValidationError(f"target rate must be positive, got {target_rate_hz}")
    src = recording.sample_rate_hz
    if target_rate_hz == src:
        return Recording(recording.patient_id, list(recording.channel_names), src, recording.data.copy())
    n_in = recording.n_samples
    n_out = int(round(n_in * target_rate_hz / src))
    if n_out < 1:
        raise ValidationError("resampled recording would be empty")
    t_in = np.arange(n_in) / src
    t_out = np.arange(n_out) / target_rate_hz
    data = np.stack([np.interp(t_out, t_in, row) for row in recording.data])
    return Recording(
        recording.patient_id,
        list(recording.channel_names),
        target_rate_hz,
        data.astype(recording.data.dtype, copy=False),
    )


def select_channels(recording: Recording, names: Sequence[str]) -> Recording:
    missing = [n for n in names if n not in recording.channel_names]
    if missing:
        raise ValidationError(f"recording {recording.patient_id} lacks channels: {', '.join(missing)}")
    index = [recording.channel_names.index(n) for n in names]
    return Recording(recording.patient_id, list(names), recording.sample_rate_hz, recording.data[index])


def segment(recording: Recording, window_seconds: float, id_prefix: Optional[str] = None) -> List[Segment]:
    """Cut consecutive non-overlapping windows; the trailing remainder is dropped."""
    w = int(round(window_seconds * recording.sample_rate_hz))
    if w < 1:
        raise ValidationError("window is shorter than one sample")
    prefix = id_prefix or recording.patient_id
    out = []
    for i in range(recording.n_samples // w):
        out.append(
            Segment(
                id=f"{prefix}_w{i:05d}",
                patient_id=recording.patient_id,
                data=recording.data[:, i * w:(i + 1) * w].copy(),
                votes=[],
                channel_names=list(recording.channel_names),
            )
        )
    return out


def filter_by_votes(dataset: Dataset, min_experts: int) -> Dataset:
    """Keep segments reviewed by strictly more than ``min_experts`` experts."""
    return dataset.replace([s for s in dataset.segments if sum(s.votes) > min_experts])


def normalize_votes(votes) -> SoftLabel:
    v = np.asarray(votes, dtype=np.float64)
    total = v.sum()
    if total <= 0:
        raise ValidationError("cannot normalize all-zero votes (unlabeled segment)")
    return SoftLabel(v / total)


def soft_labels(votes: np.ndarray) -> np.ndarray:
    """Row-wise ``normalize_votes`` for a ``[N, n_classes]`` vote matrix."""
    votes = np.asarray(votes, dtype=np.float64)
    totals = votes.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise ValidationError(f"{int(np.sum(totals <= 0))} segment(s) carry no votes")
    return votes / totals


def oversample_minority(dataset: Dataset, seed: int) -> Dataset:
    """Duplicate minority-class segments (seeded, with replacement) up to the majority count."""
    labels = dataset.hard_labels()
    counts = Counter(labels.tolist())
    empty = [dataset.class_names[c] for c in range(dataset.n_classes) if counts[c] == 0]
    if empty:
        raise ValidationError(f"cannot oversample, class has no segments: {', '.join(empty)}")
    target = max(counts.values())
    rng = np.random.default_rng(seed)
    by_class: Dict[int, List[int]] = {c: np.flatnonzero(labels == c).tolist() for c in range(dataset.n_classes)}
    extra = []
    for c in range(dataset.n_classes):
        need = target - counts[c]
        if need <= 0:
            continue
        picks = rng.choice(by_class[c], size=need, replace=True)
        for n, idx in enumerate(picks):
            src = dataset.segments[idx]
            extra.append(
                Segment(
                    id=f"{src.id}_dup{n:06d}",
                    patient_id=src.patient_id,
                    data=src.data,
                    votes=list(src.votes),
                    channel_names=list(src.channel_names),
                )
            )
    return dataset.replace(list(dataset.segments) + extra)


def prepare(dataset: Dataset, cfg: PreprocessConfig, seed: int = 0) -> Dataset:
    """Run a labeled container through the full pipeline.

    Each input segment is treated as a recording: it is resampled, restricted to
    ``cfg.channel_selection`` (when given), re-windowed, and every child window
    inherits the parent's votes.
    """
    cfg.validate()
    names = list(cfg.channel_selection) or list(dataset.channel_names)
    window = int(round(cfg.window_seconds * cfg.target_rate_hz))
    out = []
    for seg in dataset.segments:
        rec = Recording(seg.patient_id, list(dataset.channel_names), dataset.sample_rate_hz, seg.data)
        rec = select_channels(resample(rec, cfg.target_rate_hz), names)
        for child in segment(rec, cfg.window_seconds, id_prefix=seg.id):
            child.votes = list(seg.votes)
            out.append(child)
    result = Dataset(cfg.target_rate_hz, window, names, list(dataset.class_names), out)
    if cfg.min_expert_votes is not None:
        result = filter_by_votes(result, cfg.min_expert_votes)
    if cfg.oversample:
        result = oversample_minority(result, seed)
    return result
