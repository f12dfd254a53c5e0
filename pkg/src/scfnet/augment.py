"""Training-time augmentations on a single ``[channels, T]`` window.

Every function takes a ``numpy.random.Generator`` and returns a new array;
inputs are never modified.  Crop and time-out intervals are shared by all
channels of the window.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .core import ValidationError


@dataclass
class AugmentConfig:
    rrc_range: Tuple[float, float] = (0.8, 1.0)
    timeout_range: Tuple[int, int] = (0, 2000)
    # None means "first half of the channels" / "second half"
    left_channels: Optional[List[int]] = None
    right_channels: Optional[List[int]] = None
    p_shuffle_within: float = 0.5
    p_swap_hemispheres: float = 0.5
    rrc: bool = True
    timeout: bool = True
    swap: bool = True

    def hemispheres(self, n_channels: int) -> Tuple[List[int], List[int]]:
        half = n_channels // 2
        left = list(range(half)) if self.left_channels is None else list(self.left_channels)
        right = (
            list(range(half, 2 * half)) if self.right_channels is None else list(self.right_channels)
        )
        return left, right

    def validate(self, n_channels: int, window_samples: int):
        lo, hi = self.rrc_range
        if not 0 < lo <= hi <= 1:
            raise ValidationError(f"rrc_range must satisfy 0 < l <= m <= 1, got {self.rrc_range}")
        tl, tu = self.timeout_range
        if not 0 <= tl <= tu:
            raise ValidationError(f"timeout_range must satisfy 0 <= t_l <= t_u, got {self.timeout_range}")
        if self.timeout and tu > window_samples:
            raise ValidationError(f"timeout upper bound {tu} exceeds window of {window_samples} samples")
        for p in (self.p_shuffle_within, self.p_swap_hemispheres):
            if not 0 <= p <= 1:
                raise ValidationError(f"probability {p} outside [0, 1]")
        left, right = self.hemispheres(n_channels)
        _check_hemispheres(left, right, n_channels)
        return self


def _check_hemispheres(left, right, n_channels):
    if set(left) & set(right):
        raise ValidationError(f"hemisphere index lists overlap: {sorted(set(left) & set(right))}")
    if len(left) != len(right):
        raise ValidationError("left and right hemisphere lists must have equal length")
    if len(set(left)) != len(left) or len(set(right)) != len(right):
        raise ValidationError("hemisphere index lists contain duplicates")
    for i in list(left) + list(right):
        if not 0 <= i < n_channels:
            raise ValidationError(f"channel index {i} out of range for {n_channels} channels")


def resize_linear(window: np.ndarray, length: int) -> np.ndarray:
    """Linearly resample every row of ``window`` onto ``length`` evenly spaced points."""
    n = window.shape[-1]
    if n == length:
        return window.copy()
    src = np.linspace(0.0, 1.0, n)
    dst = np.linspace(0.0, 1.0, length)
    return np.stack([np.interp(dst, src, row) for row in window]).astype(window.dtype, copy=False)


def random_resized_crop(window: np.ndarray, lo: float, hi: float, rng: np.random.Generator) -> np.ndarray:
    T = window.shape[-1]
    p = rng.uniform(lo, hi) if hi > lo else lo
    c = int(round(p * T))
    if c <= 0:
        raise ValidationError(f"crop of {p:.3g} x {T} samples is empty")
    c = min(c, T)
    start = int(rng.integers(0, T - c + 1))
    return resize_linear(window[:, start:start + c], T)


def time_out(window: np.ndarray, t_lo: int, t_hi: int, rng: np.random.Generator) -> np.ndarray:
    T = window.shape[-1]
    if t_hi > T:
        raise ValidationError(f"time-out length {t_hi} exceeds window of {T} samples")
    t = int(rng.integers(t_lo, t_hi + 1))
    start = int(rng.integers(0, T - t + 1))
    out = window.copy()
    out[:, start:start + t] = 0
    return out


def hemisphere_swap(window: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    n = window.shape[0]
    left, right = cfg.hemispheres(n)
    _check_hemispheres(left, right, n)
    left = np.asarray(left, dtype=np.int64)
    right = np.asarray(right, dtype=np.int64)
    order = np.arange(n)
    # draws happen unconditionally so the stream position never depends on outcomes
    shuffle_left = rng.random() < cfg.p_shuffle_within
    perm_left = rng.permutation(len(left))
    shuffle_right = rng.random() < cfg.p_shuffle_within
    perm_right = rng.permutation(len(right))
    swap = rng.random() < cfg.p_swap_hemispheres
    new_left = left[perm_left] if shuffle_left else left
    new_right = right[perm_right] if shuffle_right else right
    if swap:
        new_left, new_right = new_right, new_left
    order[left] = new_left
    order[right] = new_right
    return window[order]


def augment_window(window: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply every enabled augmentation once, in the order crop, time-out, swap."""
    out = window
    if cfg.rrc:
        out = random_resized_crop(out, cfg.rrc_range[0], cfg.rrc_range[1], rng)
    if cfg.timeout:
        out = time_out(out, cfg.timeout_range[0], cfg.timeout_range[1], rng)
    if cfg.swap:
        out = hemisphere_swap(out, cfg, rng)
    return out if out is not window else window.copy()


def augment_batch(batch: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    return np.stack([augment_window(w, cfg, rng) for w in batch]) if len(batch) else batch.copy()
