"""Domain types and the on-disk dataset container.

A dataset directory holds a ``manifest.json`` plus one raw blob per segment
under ``segments/``.  Blobs are little-endian float32, channel-major, with no
header, so a segment of ``C`` channels and ``T`` samples is exactly
``C * T * 4`` bytes.
"""

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence

import numpy as np

MANIFEST_VERSION = 1
BLOB_DTYPE = np.dtype("<f4")


class ValidationError(ValueError):
    """Raised when user-supplied data or configuration breaks a contract."""


class FormatError(ValidationError):
    """Raised when an on-disk artifact cannot be decoded."""


@dataclass
class Recording:
    patient_id: str
    channel_names: List[str]
    sample_rate_hz: float
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValidationError(f"recording data must be 2-D, got shape {self.data.shape}")
        n_ch, n_samples = self.data.shape
        if n_ch < 1 or n_ch != len(self.channel_names):
            raise ValidationError(
                f"recording has {n_ch} rows but {len(self.channel_names)} channel names"
            )
        if n_samples < 1:
            raise ValidationError("recording has no samples")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ValidationError("recording channel names are not unique")
        if not self.sample_rate_hz > 0:
            raise ValidationError(f"sample rate must be positive, got {self.sample_rate_hz}")

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass
class Segment:
    id: str
    patient_id: str
    data: np.ndarray
    votes: List[int]
    channel_names: List[str] = field(default_factory=list)

    @property
    def hard_label(self) -> int:
        # np.argmax breaks ties toward the lowest index
        return int(np.argmax(self.votes))


@dataclass
class SoftLabel:
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ValidationError("soft label entries must lie in [0, 1]")
        if abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValidationError(f"soft label sums to {self.probs.sum()}, expected 1")


@dataclass
class Dataset:
    sample_rate_hz: float
    window_samples: int
    channel_names: List[str]
    class_names: List[str]
    segments: List[Segment] = field(default_factory=list)

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def __len__(self):
        return len(self.segments)

    def replace(self, segments: Sequence[Segment]) -> "Dataset":
        """Same metadata, different segment list."""
        return Dataset(
            sample_rate_hz=self.sample_rate_hz,
            window_samples=self.window_samples,
            channel_names=list(self.channel_names),
            class_names=list(self.class_names),
            segments=list(segments),
        )

    def arrays(self):
        """Stack segment data into ``[N, C, T]`` float32 and votes into ``[N, n_classes]``."""
        if not self.segments:
            x = np.zeros((0, self.n_channels, self.window_samples), dtype=np.float32)
            return x, np.zeros((0, self.n_classes), dtype=np.int64)
        x = np.stack([np.asarray(s.data, dtype=np.float32) for s in self.segments])
        v = np.asarray([s.votes for s in self.segments], dtype=np.int64)
        return x, v

    def hard_labels(self) -> np.ndarray:
        return np.asarray([s.hard_label for s in self.segments], dtype=np.int64)

    def patient_ids(self) -> List[str]:
        return [s.patient_id for s in self.segments]


def validate_dataset(dataset: Dataset) -> List[str]:
    """Return a list of human-readable invariant violations; empty when valid."""
    problems = []
    if not dataset.class_names:
        problems.append("dataset: class_names is empty")
    if not dataset.channel_names:
        problems.append("dataset: channel_names is empty")
    if len(set(dataset.channel_names)) != len(dataset.channel_names):
        problems.append("dataset: channel names are not unique")
    if not (isinstance(dataset.sample_rate_hz, (int, float)) and dataset.sample_rate_hz > 0):
        problems.append("dataset: sample_rate_hz must be positive")
    if int(dataset.window_samples) < 1:
        problems.append("dataset: window_samples must be >= 1")
    expected = (len(dataset.channel_names), int(dataset.window_samples))
    seen = set()
    for seg in dataset.segments:
        if seg.id in seen:
            problems.append(f"segment {seg.id}: duplicate id")
        seen.add(seg.id)
        data = np.asarray(seg.data)
        if data.shape != expected:
            problems.append(f"segment {seg.id}: data shape {data.shape} != {expected}")
        elif not np.all(np.isfinite(data)):
            problems.append(f"segment {seg.id}: data contains non-finite values")
        if len(seg.votes) != len(dataset.class_names):
            problems.append(
                f"segment {seg.id}: votes length {len(seg.votes)} != {len(dataset.class_names)} classes"
            )
        elif any(int(v) < 0 for v in seg.votes):
            problems.append(f"segment {seg.id}: negative vote count")
    return problems


def check_dataset(dataset: Dataset) -> None:
    problems = validate_dataset(dataset)
    if problems:
        raise ValidationError(problems[0] if len(problems) == 1 else "; ".join(problems[:3]))


def save_dataset(dataset: Dataset, directory) -> None:
    """Write ``dataset`` as manifest + raw blobs.  Existing blobs are overwritten."""
    check_dataset(dataset)
    directory = Path(directory)
    seg_dir = directory / "segments"
    seg_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for seg in dataset.segments:
        rel = f"segments/{seg.id}.f32"
        blob = np.ascontiguousarray(np.asarray(seg.data), dtype=BLOB_DTYPE)
        (directory / rel).write_bytes(blob.tobytes(order="C"))
        entries.append(
            {
                "id": seg.id,
                "patient_id": seg.patient_id,
                "file": rel,
                "votes": [int(v) for v in seg.votes],
            }
        )
    manifest = {
        "version": MANIFEST_VERSION,
        "sample_rate_hz": _json_number(dataset.sample_rate_hz),
        "window_samples": int(dataset.window_samples),
        "channel_names": list(dataset.channel_names),
        "class_names": list(dataset.class_names),
        "segments": entries,
    }
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    os.replace(tmp, directory / "manifest.json")


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.is_file():
        raise FormatError(f"no manifest.json in {directory}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed manifest {path}: {exc}") from None
    version = manifest.get("version")
    if version != MANIFEST_VERSION:
        raise FormatError(f"unsupported manifest version {version!r}")
    try:
        channel_names = list(manifest["channel_names"])
        window = int(manifest["window_samples"])
        shape = (len(channel_names), window)
        nbytes = shape[0] * shape[1] * BLOB_DTYPE.itemsize
        segments = []
        for entry in manifest["segments"]:
            blob = directory / entry["file"]
            if not blob.is_file():
                raise FormatError(f"segment {entry['id']}: missing blob {entry['file']}")
            raw = blob.read_bytes()
            if len(raw) != nbytes:
                raise FormatError(
                    f"segment {entry['id']}: shape mismatch, blob has {len(raw)} bytes, "
                    f"expected {nbytes} for {shape[0]}x{shape[1]}"
                )
            data = np.frombuffer(raw, dtype=BLOB_DTYPE).reshape(shape).astype(np.float32)
            segments.append(
                Segment(
                    id=entry["id"],
                    patient_id=entry["patient_id"],
                    data=data,
                    votes=[int(v) for v in entry["votes"]],
                    channel_names=list(channel_names),
                )
            )
        dataset = Dataset(
            sample_rate_hz=manifest["sample_rate_hz"],
            window_samples=window,
            channel_names=channel_names,
            class_names=list(manifest["class_names"]),
            segments=segments,
        )
    except KeyError as exc:
        raise FormatError(f"manifest missing field {exc}") from None
    check_dataset(dataset)
    return dataset


def _json_number(x):
    x = float(x)
    return int(x) if x.is_integer() and not math.isinf(x) else x
