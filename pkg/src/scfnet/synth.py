"""Seeded synthetic EEG: per-channel sinusoid at a class frequency plus AR(1) noise.

Channels are generated independently from the same process, so every channel
carries the class on its own and the channels are exchangeable.
"""

from dataclasses import dataclass, field, replace
from typing import List, Tuple

import numpy as np
from scipy.signal import lfilter

from .core import Dataset, Segment, ValidationError
from .preprocess import EEG16

CLASS_NAMES = ["delta", "theta", "alpha", "beta", "gamma", "mu", "sigma", "kappa"]


@dataclass
class SynthConfig:
    n_classes: int = 4
    n_channels: int = 16
    n_patients: int = 40
    segments_per_patient: int = 25
    window_samples: int = 512
    sample_rate_hz: float = 200.0
    class_freqs_hz: List[float] = field(default_factory=lambda: [2.0, 6.0, 12.0, 20.0])
    ar_coeff: float = 0.9
    noise_sigma: float = 0.3
    amplitude_range: Tuple[float, float] = (0.5, 1.5)
    patient_gain_range: Tuple[float, float] = (0.8, 1.2)
    total_votes: int = 15
    true_class_votes: int = 12
    seed: int = 0
    patient_prefix: str = "p"

    def validate(self):
        if self.n_classes < 2:
            raise ValidationError("n_classes must be >= 2")
        if len(self.class_freqs_hz) != self.n_classes:
            raise ValidationError(
                f"need one class frequency per class, got {len(self.class_freqs_hz)} for {self.n_classes}"
            )
        if len(set(self.class_freqs_hz)) != len(self.class_freqs_hz):
            raise ValidationError("class frequencies must be distinct")
        if any(f <= 0 or f >= self.sample_rate_hz / 2 for f in self.class_freqs_hz):
            raise ValidationError("class frequencies must lie in (0, Nyquist)")
        if not 0 <= self.ar_coeff < 1:
            raise ValidationError("ar_coeff must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be non-negative")
        if not 0 <= self.true_class_votes <= self.total_votes:
            raise ValidationError("true_class_votes must lie in [0, total_votes]")
        if min(self.n_channels, self.n_patients, self.segments_per_patient, self.window_samples) < 1:
            raise ValidationError("channel, patient, segment and window counts must be positive")
        for lo, hi in (self.amplitude_range, self.patient_gain_range):
            if lo > hi:
                raise ValidationError("ranges must satisfy low <= high")
        return self


def default_freqs(n_classes: int, sample_rate_hz: float = 200.0) -> List[float]:
    """The stock 2/6/12/20 Hz set, extended on a 6 Hz grid below Nyquist when more classes are asked for."""
    base = [2.0, 6.0, 12.0, 20.0]
    if n_classes <= len(base):
        return base[:n_classes]
    freqs = list(base)
    while len(freqs) < n_classes:
        freqs.append(freqs[-1] + 6.0)
    if freqs[-1] >= sample_rate_hz / 2:
        raise ValidationError(f"{n_classes} classes do not fit below Nyquist")
    return freqs


def channel_names(n_channels: int) -> List[str]:
    if n_channels <= len(EEG16):
        return EEG16[:n_channels]
    return [f"ch{i:02d}" for i in range(n_channels)]


def class_names(n_classes: int) -> List[str]:
    if n_classes <= len(CLASS_NAMES):
        return CLASS_NAMES[:n_classes]
    return [f"class{i}" for i in range(n_classes)]


def ar1_noise(rng, shape, rho, sigma):
    """Stationary AR(1) rows with marginal standard deviation ``sigma``."""
    e = rng.standard_normal(shape) * sigma * np.sqrt(1.0 - rho * rho)
    e[..., 0] = rng.standard_normal(shape[:-1]) * sigma
    return lfilter([1.0], [1.0, -rho], e, axis=-1)


def generate(config: SynthConfig) -> Dataset:
    config.validate()
    rng = np.random.default_rng(config.seed)
    C, T, fs = config.n_channels, config.window_samples, config.sample_rate_hz
    t = np.arange(T) / fs
    freqs = np.asarray(config.class_freqs_hz, dtype=np.float64)
    segments = []
    for p in range(config.n_patients):
        pid = f"{config.patient_prefix}{p:03d}"
        gain = rng.uniform(*config.patient_gain_range)
        for _ in range(config.segments_per_patient):
            c = int(rng.integers(config.n_classes))
            amp = rng.uniform(*config.amplitude_range, size=(C, 1))
            phase = rng.uniform(0.0, 2 * np.pi, size=(C, 1))
            data = gain * amp * np.sin(2 * np.pi * freqs[c] * t[None, :] + phase)
            if config.noise_sigma > 0:
                data = data + ar1_noise(rng, (C, T), config.ar_coeff, config.noise_sigma)
            votes = np.zeros(config.n_classes, dtype=np.int64)
            votes[c] = config.true_class_votes
            spare = config.total_votes - config.true_class_votes
            if spare:
                others = [k for k in range(config.n_classes) if k != c]
                hits = rng.multinomial(spare, np.full(len(others), 1.0 / len(others)))
                votes[others] += hits
            segments.append(
                Segment(
                    id=f"{pid}_s{len(segments):06d}",
                    patient_id=pid,
                    data=data.astype(np.float32),
                    votes=votes.tolist(),
                    channel_names=channel_names(C),
                )
            )
    return Dataset(
        sample_rate_hz=fs,
        window_samples=T,
        channel_names=channel_names(C),
        class_names=class_names(config.n_classes),
        segments=segments,
    )


def generate_pair(config: SynthConfig) -> Tuple[Dataset, Dataset]:
    """A ``config.n_channels`` dataset and an 8-channel one from disjoint patients."""
    if config.n_channels < 8:
        raise ValidationError("generate_pair needs at least 8 channels in the primary dataset")
    first = generate(config)
    seed8 = int(np.random.SeedSequence([config.seed, 8]).generate_state(1)[0])
    second = generate(replace(config, n_channels=8, seed=seed8, patient_prefix=config.patient_prefix + "q"))
    return first, second
