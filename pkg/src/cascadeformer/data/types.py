from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass
class SkeletonClip:
    """One video: ``joints`` is ``[M persons, T frames, J joints, C coords]``."""

    joints: np.ndarray
    label: int
    visibility: np.ndarray | None = None  # bool [T, J]

    @property
    def persons(self) -> int:
        return self.joints.shape[0]

    @property
    def frame_count(self) -> int:
        return self.joints.shape[1]

    @property
    def joint_count(self) -> int:
        return self.joints.shape[2]

    @property
    def coord_dims(self) -> int:
        return self.joints.shape[3]

    def validate(self, n_classes: int | None = None, index: int = 0, strict_coords: bool = True) -> "SkeletonClip":
        j = self.joints
        if j.ndim != 4 or min(j.shape) < 1:
            raise DatasetError(f"clip {index}: joints must be [M, T, J, C] with positive extents, got {j.shape}")
        if strict_coords and j.shape[3] not in (2, 3):
            raise DatasetError(f"clip {index}: coords must have C in {{2, 3}}, got C={j.shape[3]}")
        if not np.all(np.isfinite(j)):
            raise DatasetError(f"clip {index}: joints contain non-finite coordinates")
        if self.label < 0 or (n_classes is not None and self.label >= n_classes):
            raise DatasetError(f"clip {index}: label {self.label} outside [0, {n_classes})")
        if self.visibility is not None and self.visibility.shape != j.shape[1:3]:
            raise DatasetError(f"clip {index}: visibility shape {self.visibility.shape} != {j.shape[1:3]}")
        return self

    def with_joints(self, joints: np.ndarray, visibility: np.ndarray | None = None) -> "SkeletonClip":
        return SkeletonClip(joints, self.label, visibility)


@dataclass(frozen=True)
class SkeletonTopology:
    joint_count: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        for p, c in self.edges:
            if not (0 <= p < self.joint_count and 0 <= c < self.joint_count):
                raise DatasetError(f"edge ({p}, {c}) references a joint outside [0, {self.joint_count})")
            if p == c:
                raise DatasetError(f"edge ({p}, {c}) is a self-loop")

    @classmethod
    def chain(cls, joint_count: int) -> "SkeletonTopology":
        return cls(joint_count, tuple((i, i + 1) for i in range(joint_count - 1)))


# Penn Action joint order: head, shoulders, elbows, wrists, hips, knees, ankles (left/right pairs)
PENN_ACTION = SkeletonTopology(
    13,
    ((0, 1), (0, 2), (1, 3), (3, 5), (2, 4), (4, 6), (1, 7), (2, 8), (7, 9), (9, 11), (8, 10), (10, 12)),
)


def default_topology(joint_count: int) -> SkeletonTopology:
    return PENN_ACTION if joint_count == 13 else SkeletonTopology.chain(joint_count)


@dataclass
class Batch:
    x: np.ndarray  # [B, C, T_max, J]
    frame_valid: np.ndarray  # bool [B, T_max], valid frames form a prefix
    labels: np.ndarray  # int64 [B]

    @property
    def size(self) -> int:
        return self.x.shape[0]


@dataclass
class SkeletonDataset:
    clips: list[SkeletonClip]
    joint_count: int
    coord_dims: int
    class_names: list[str] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.clips)

    def __iter__(self):
        return iter(self.clips)

    def class_counts(self) -> list[int]:
        counts = Counter(c.label for c in self.clips)
        return [counts.get(k, 0) for k in range(self.n_classes)]

    def subset(self, indices) -> "SkeletonDataset":
        return SkeletonDataset([self.clips[i] for i in indices], self.joint_count, self.coord_dims, list(self.class_names))

    def validate(self, strict_coords: bool = True) -> "SkeletonDataset":
        for i, clip in enumerate(self.clips):
            clip.validate(self.n_classes, i, strict_coords)
            if clip.joint_count != self.joint_count or clip.coord_dims != self.coord_dims:
                raise DatasetError(
                    f"clip {i}: joints extent (J={clip.joint_count}, C={clip.coord_dims}) "
                    f"!= dataset (J={self.joint_count}, C={self.coord_dims})"
                )
        return self


def stratified_split(dataset: SkeletonDataset, test_fraction: float, rng: np.random.Generator):
    """Split each class independently; returns ``(train, test)`` keeping file order inside each part."""
    if not 0 < test_fraction < 1:
        raise DatasetError(f"test_fraction must be in (0, 1), got {test_fraction}")
    labels = np.array([c.label for c in dataset.clips])
    test_idx = []
    for k in range(dataset.n_classes):
        members = np.flatnonzero(labels == k)
        n_test = int(round(test_fraction * len(members)))
        test_idx.extend(rng.permutation(members)[:n_test].tolist())
    test_set = set(test_idx)
    train = [i for i in range(len(dataset)) if i not in test_set]
    return dataset.subset(train), dataset.subset(sorted(test_set))
