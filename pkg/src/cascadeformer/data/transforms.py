"""Clip-level preprocessing: padding, frame sampling, normalisation, augmentation,
person selection and bone re-encodings. All functions return new clips.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import Batch, DatasetError, SkeletonClip, SkeletonTopology, default_topology

BONE_MODES = ("subtract", "concat", "parameterize")
VERTICAL_DX = 1e-8
VERTICAL_SLOPE = 1e8


def pad_batch(clips: list[SkeletonClip], max_t: int | None = None) -> Batch:
    """Stack single-person clips into ``[B, C, T_max, J]`` with zero padding after each clip."""
    if not clips:
        raise DatasetError("pad_batch: empty clip list")
    j, c = clips[0].joint_count, clips[0].coord_dims
    longest = max(clip.frame_count for clip in clips)
    t_max = longest if max_t is None else max_t
    x = np.zeros((len(clips), c, t_max, j), dtype=np.float32)
    valid = np.zeros((len(clips), t_max), dtype=bool)
    for i, clip in enumerate(clips):
        if clip.persons != 1:
            raise DatasetError(f"pad_batch: clip {i} has {clip.persons} persons; select one first")
        if (clip.joint_count, clip.coord_dims) != (j, c):
            raise DatasetError(f"pad_batch: clip {i} has (J={clip.joint_count}, C={clip.coord_dims}), expected (J={j}, C={c})")
        t = clip.frame_count
        if t > t_max:
            raise DatasetError(f"pad_batch: clip {i} has {t} frames > max_T={t_max}; sample frames first")
        x[i, :, :t, :] = clip.joints[0].transpose(2, 0, 1)
        valid[i, :t] = True
    labels = np.array([clip.label for clip in clips], dtype=np.int64)
    return Batch(x, valid, labels)


def _take_frames(clip: SkeletonClip, idx: np.ndarray) -> SkeletonClip:
    vis = None if clip.visibility is None else clip.visibility[idx]
    return clip.with_joints(clip.joints[:, idx], vis)


def center_indices(t: int, length: int, window_scale: float | None = 1.3) -> np.ndarray:
    """Evenly spaced source indices over a window centred on the clip midpoint.

    The window spans ``min(T, round(window_scale * length))`` frames, or the
    whole clip when ``window_scale`` is None. Short clips (``T < length``)
    repeat frames evenly.
    """
    if length < 1:
        raise ValueError(f"sample length must be >= 1, got {length}")
    if t >= length:
        w = t if window_scale is None else min(t, int(round(window_scale * length)))
        start = (t - w) // 2
    else:
        w, start = t, 0
    i = np.arange(length, dtype=np.int64)
    return start + (i * w) // length


def sample_frames_center(clip: SkeletonClip, length: int = 64, rng=None, window_scale: float | None = 1.3) -> SkeletonClip:
    # rng is accepted for interface symmetry with sample_frames_random; centre sampling is deterministic
    return _take_frames(clip, center_indices(clip.frame_count, length, window_scale))


def random_indices(t: int, length: int, rng: np.random.Generator) -> np.ndarray:
    if length < 1:
        raise ValueError(f"sample length must be >= 1, got {length}")
    if t >= length:
        return np.sort(rng.choice(t, size=length, replace=False))
    return np.sort(rng.integers(0, t, size=length))


def sample_frames_random(clip: SkeletonClip, length: int = 64, rng: np.random.Generator | None = None) -> SkeletonClip:
    if rng is None:
        raise ValueError("sample_frames_random needs an rng")
    return _take_frames(clip, random_indices(clip.frame_count, length, rng))


def normalize_hip_center_scale(clip: SkeletonClip, hip_index: int) -> SkeletonClip:
    """Move the hip joint to the origin in every frame, then divide by the clip's mean frame extent.

    The extent of a frame is the largest distance between any two of its
    joints; the divisor averages it over all frames (and persons).
    """
    if not 0 <= hip_index < clip.joint_count:
        raise DatasetError(f"hip_index {hip_index} outside [0, {clip.joint_count})")
    x = clip.joints.astype(np.float64)
    x = x - x[:, :, hip_index : hip_index + 1, :]
    diff = x[:, :, :, None, :] - x[:, :, None, :, :]
    extent = np.sqrt((diff * diff).sum(-1)).max(axis=(-1, -2))
    scale = extent.mean()
    if not scale > 0:
        raise DatasetError("normalize_hip_center_scale: zero scale (all joints coincide)")
    return clip.with_joints((x / scale).astype(np.float32), clip.visibility)


@dataclass
class AugmentConfig:
    """Ranges are closed intervals sampled uniformly; a degenerate range is a fixed value."""

    rotation_range: tuple[float, float] = (-np.pi / 12, np.pi / 12)
    scale_range: tuple[float, float] = (0.9, 1.1)
    joint_drop_p: float = 0.05
    axis_drop_p: float = 0.1
    rotate: bool = True
    scale: bool = True
    joint_drop: bool = True
    axis_drop: bool = True

    def __post_init__(self) -> None:
        for name in ("joint_drop_p", "axis_drop_p"):
            p = getattr(self, name)
            if not 0 <= p <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must be positive and ordered, got {self.scale_range}")
        if self.rotation_range[0] > self.rotation_range[1]:
            raise ValueError(f"rotation_range must be ordered, got {self.rotation_range}")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(rotate=False, scale=False, joint_drop=False, axis_drop=False)


def rotation_matrix(angle: float, dims: int) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    if dims == 2:
        return np.array([[c, -s], [s, c]])
    # about the vertical (y) axis
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def augment(clip: SkeletonClip, cfg: AugmentConfig, rng: np.random.Generator) -> SkeletonClip:
    """Rotate, scale, drop joints, drop one axis, in that order.

    The same random draws are consumed whatever the enabled flags, so toggling
    one augmentation never shifts the others' randomness.
    """
    c = clip.coord_dims
    angle = rng.uniform(*cfg.rotation_range)
    factor = rng.uniform(*cfg.scale_range)
    drop_joint = rng.random(clip.joint_count) < cfg.joint_drop_p
    drop_axis = rng.random() < cfg.axis_drop_p
    axis = int(rng.integers(0, c))

    x = clip.joints.astype(np.float64)
    if cfg.rotate:
        x = x @ rotation_matrix(angle, c).T
    if cfg.scale:
        x = x * factor
    if cfg.joint_drop:
        x[:, :, drop_joint, :] = 0.0
    if cfg.axis_drop and drop_axis:
        x[..., axis] = 0.0
    return clip.with_joints(x.astype(np.float32), clip.visibility)


def select_most_active_person(clip: SkeletonClip) -> SkeletonClip:
    """Keep the person whose coordinates vary most over time (ties go to the lowest index)."""
    if clip.persons == 1:
        return clip
    activity = clip.joints.astype(np.float64).var(axis=1).sum(axis=(1, 2))
    keep = int(np.argmax(activity))
    return clip.with_joints(clip.joints[keep : keep + 1].copy(), clip.visibility)


def drop_occluded(clip: SkeletonClip, max_invisible: float = 0.5) -> SkeletonClip:
    """Drop frames with more than ``max_invisible`` of joints invisible; zero the remaining invisible joints."""
    if clip.visibility is None:
        return clip
    vis = clip.visibility
    keep = (~vis).mean(axis=1) <= max_invisible
    if not keep.any():
        raise DatasetError("drop_occluded: every frame is occluded")
    joints = clip.joints[:, keep].copy()
    vis = vis[keep]
    joints[:, ~vis] = 0.0
    return clip.with_joints(joints, vis)


def to_bone_representation(clip: SkeletonClip, topology: SkeletonTopology, mode: str) -> np.ndarray:
    """Edge-wise re-encoding, returned as ``[M, T, E, C']``.

    ``subtract`` gives child - parent (C' = C), ``concat`` gives parent ‖ child
    (C' = 2C), ``parameterize`` gives the slope and intercept of the 2-D line
    through both joints (C' = 2). Near-vertical bones get slope ±1e8.
    """
    if mode not in BONE_MODES:
        raise ValueError(f"unknown bone mode {mode!r}; expected one of {BONE_MODES}")
    if not topology.edges:
        raise DatasetError("bone representation needs a non-empty edge list")
    if topology.joint_count != clip.joint_count:
        raise DatasetError(f"topology has {topology.joint_count} joints, clip has {clip.joint_count}")
    edges = np.array(topology.edges)
    parent = clip.joints[:, :, edges[:, 0], :].astype(np.float64)
    child = clip.joints[:, :, edges[:, 1], :].astype(np.float64)
    if mode == "subtract":
        out = child - parent
    elif mode == "concat":
        out = np.concatenate([parent, child], axis=-1)
    else:
        if clip.coord_dims != 2:
            raise ValueError(f"parameterize mode supports C=2 only, got C={clip.coord_dims}")
        dx = child[..., 0] - parent[..., 0]
        dy = child[..., 1] - parent[..., 1]
        vertical = np.abs(dx) < VERTICAL_DX
        sign = np.where(dy < 0, -1.0, 1.0)
        slope = np.where(vertical, sign * VERTICAL_SLOPE, dy / np.where(vertical, 1.0, dx))
        intercept = parent[..., 1] - slope * parent[..., 0]
        out = np.stack([slope, intercept], axis=-1)
    return out.astype(np.float32)


REPRESENTATIONS = ("joints",) + BONE_MODES


@dataclass
class Preprocess:
    """Per-clip pipeline applied before batching.

    Training applies the full pipeline with a clip-specific rng. Evaluation
    never augments, and replaces random frame sampling with centre sampling
    so that it is deterministic.
    """

    select_person: bool = True
    remove_occluded: bool = False
    hip_index: int | None = None
    sampling: str = "pad"  # pad | center | random
    frames: int = 64
    center_window_scale: float | None = 1.3
    augment: AugmentConfig | None = None
    representation: str = "joints"
    topology: SkeletonTopology | None = None

    def __post_init__(self) -> None:
        if self.sampling not in ("pad", "center", "random"):
            raise ValueError(f"unknown sampling {self.sampling!r}")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}; expected one of {REPRESENTATIONS}")

    def output_shape(self, joint_count: int, coord_dims: int) -> tuple[int, int]:
        """(J', C') of clips produced by this pipeline."""
        if self.representation == "joints":
            return joint_count, coord_dims
        n_edges = len(self._topology(joint_count).edges)
        return n_edges, {"subtract": coord_dims, "concat": 2 * coord_dims, "parameterize": 2}[self.representation]

    def _topology(self, joint_count: int) -> SkeletonTopology:
        return self.topology or default_topology(joint_count)

    def __call__(self, clip: SkeletonClip, rng: np.random.Generator | None = None, train: bool = True) -> SkeletonClip:
        if self.remove_occluded:
            clip = drop_occluded(clip)
        if self.select_person:
            clip = select_most_active_person(clip)
        if self.hip_index is not None:
            clip = normalize_hip_center_scale(clip, self.hip_index)
        if self.sampling == "random" and train:
            clip = sample_frames_random(clip, self.frames, rng)
        elif self.sampling in ("random", "center"):
            clip = sample_frames_center(clip, self.frames, window_scale=self.center_window_scale)
        if self.augment is not None and train:
            clip = augment(clip, self.augment, rng)
        if self.representation != "joints":
            bones = to_bone_representation(clip, self._topology(clip.joint_count), self.representation)
            clip = SkeletonClip(bones, clip.label, None)
        return clip


def penn_action_recipe() -> Preprocess:
    return Preprocess(remove_occluded=True, sampling="pad")


def nucla_recipe(hip_index: int = 0) -> Preprocess:
    return Preprocess(hip_index=hip_index, sampling="random", frames=64, augment=AugmentConfig())


def ntu_recipe() -> Preprocess:
    aug = AugmentConfig(scale=False, joint_drop=False, axis_drop=False)
    return Preprocess(sampling="center", frames=64, augment=aug)
