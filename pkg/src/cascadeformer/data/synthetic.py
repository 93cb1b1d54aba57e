"""Sinusoidal skeleton corpus for desk-scale end-to-end runs.

Every coordinate of every joint follows

    x[t, j, c] = rest[j, c] + amp[j, c] * sin(2π f_k t / T + phase[k, j, c]) + noise

The rest pose and amplitudes are shared by all classes, so single frames of
different classes cover the same coordinate range. Classes differ in their
frequency ``f_k`` (cycles per clip) and in their per-joint phase template;
telling them apart means looking at how joints move over time.
"""

from __future__ import annotations

import numpy as np

from ..nn.rng import SYNTH, make_rng
from .types import DatasetError, SkeletonClip, SkeletonDataset

BASE_FREQUENCY = 1.0
FREQUENCY_STEP = 0.75


def class_frequencies(n_classes: int) -> np.ndarray:
    return BASE_FREQUENCY + FREQUENCY_STEP * np.arange(n_classes)


def generate_synthetic(
    n_classes: int,
    clips_per_class: int,
    frames: int,
    joints: int,
    dims: int,
    noise_sigma: float,
    seed: int,
) -> SkeletonDataset:
    """Clips come out class-major: all of class 0, then class 1, and so on."""
    if n_classes < 2:
        raise DatasetError(f"need at least 2 classes, got {n_classes}")
    if clips_per_class < 1 or frames < 1 or joints < 1:
        raise DatasetError("clips_per_class, frames and joints must be positive")
    if dims not in (2, 3):
        raise DatasetError(f"dims must be 2 or 3, got {dims}")
    if noise_sigma < 0:
        raise DatasetError(f"noise_sigma must be non-negative, got {noise_sigma}")

    rng = make_rng(seed, SYNTH)
    rest = rng.uniform(-1.0, 1.0, size=(joints, dims))
    amp = rng.uniform(0.3, 1.0, size=(joints, dims))
    phase = rng.uniform(0.0, 2 * np.pi, size=(n_classes, joints, dims))
    freq = class_frequencies(n_classes)
    t = np.arange(frames)[:, None, None] / frames

    clips = []
    for k in range(n_classes):
        template = rest + amp * np.sin(2 * np.pi * freq[k] * t + phase[k])
        for _ in range(clips_per_class):
            x = template + noise_sigma * rng.standard_normal(template.shape) if noise_sigma > 0 else template
            clips.append(SkeletonClip(x[None].astype(np.float32), k))
    names = [f"synthetic_{k}" for k in range(n_classes)]
    return SkeletonDataset(clips, joints, dims, names)
