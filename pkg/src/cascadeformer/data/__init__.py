"""Skeleton clip data model, SKL1 file I/O, preprocessing and synthetic data."""

from .io import decode_dataset, encode_dataset, load_dataset, save_dataset
from .synthetic import generate_synthetic
from .transforms import (
    AugmentConfig,
    Preprocess,
    augment,
    center_indices,
    drop_occluded,
    normalize_hip_center_scale,
    ntu_recipe,
    nucla_recipe,
    pad_batch,
    penn_action_recipe,
    random_indices,
    sample_frames_center,
    sample_frames_random,
    select_most_active_person,
    to_bone_representation,
)
from .types import (
    PENN_ACTION,
    Batch,
    DatasetError,
    SkeletonClip,
    SkeletonDataset,
    SkeletonTopology,
    default_topology,
    stratified_split,
)

__all__ = [
    "PENN_ACTION",
    "AugmentConfig",
    "Batch",
    "DatasetError",
    "Preprocess",
    "SkeletonClip",
    "SkeletonDataset",
    "SkeletonTopology",
    "augment",
    "center_indices",
    "decode_dataset",
    "default_topology",
    "drop_occluded",
    "encode_dataset",
    "generate_synthetic",
    "load_dataset",
    "normalize_hip_center_scale",
    "ntu_recipe",
    "nucla_recipe",
    "pad_batch",
    "penn_action_recipe",
    "random_indices",
    "sample_frames_center",
    "sample_frames_random",
    "save_dataset",
    "select_most_active_person",
    "stratified_split",
    "to_bone_representation",
]
