"""SKL1 clip files.

Layout (little-endian)::

    b"SKL1"
    u32 clip_count, u32 J, u32 C, u32 class_count
    per clip:
        u32 label, u32 M, u32 T, u8 has_visibility
        f32 joints[M][T][J][C]
        u8  vis[T][J]            (only when has_visibility)

Class names live in a JSON sidecar next to the binary file
(``<path>.json``: ``{"format": "SKL1", "class_names": [...]}``).
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .types import DatasetError, SkeletonClip, SkeletonDataset

MAGIC = b"SKL1"
_HEADER = struct.Struct("<4sIIII")
_CLIP = struct.Struct("<IIIB")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def encode_dataset(dataset: SkeletonDataset) -> bytes:
    parts = [_HEADER.pack(MAGIC, len(dataset.clips), dataset.joint_count, dataset.coord_dims, dataset.n_classes)]
    for i, clip in enumerate(dataset.clips):
        clip.validate(dataset.n_classes, i)
        m, t, j, c = clip.joints.shape
        if (j, c) != (dataset.joint_count, dataset.coord_dims):
            raise DatasetError(f"clip {i}: joints extent (J={j}, C={c}) != dataset (J={dataset.joint_count}, C={dataset.coord_dims})")
        has_vis = clip.visibility is not None
        parts.append(_CLIP.pack(clip.label, m, t, int(has_vis)))
        parts.append(np.ascontiguousarray(clip.joints, dtype="<f4").tobytes())
        if has_vis:
            parts.append(np.ascontiguousarray(clip.visibility, dtype=np.uint8).tobytes())
    return b"".join(parts)


def decode_dataset(buf: bytes, class_names: list[str] | None = None) -> SkeletonDataset:
    if len(buf) < _HEADER.size:
        raise DatasetError(f"truncated header: {len(buf)} bytes")
    magic, n_clips, j, c, n_classes = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DatasetError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if j < 1 or c not in (2, 3) or n_classes < 1:
        raise DatasetError(f"malformed header: J={j}, C={c}, class_count={n_classes}")
    if class_names is None:
        class_names = [f"class_{k}" for k in range(n_classes)]
    if len(class_names) != n_classes:
        raise DatasetError(f"sidecar lists {len(class_names)} class names, header says {n_classes}")

    off = _HEADER.size
    clips = []
    for i in range(n_clips):
        if off + _CLIP.size > len(buf):
            raise DatasetError(f"clip {i}: truncated clip header")
        label, m, t, has_vis = _CLIP.unpack_from(buf, off)
        off += _CLIP.size
        if m < 1 or t < 1 or has_vis > 1:
            raise DatasetError(f"clip {i}: malformed clip header (M={m}, T={t}, has_visibility={has_vis})")
        n = m * t * j * c
        if off + 4 * n > len(buf):
            raise DatasetError(f"clip {i}: truncated joints payload")
        joints = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(m, t, j, c).astype(np.float32)
        off += 4 * n
        vis = None
        if has_vis:
            if off + t * j > len(buf):
                raise DatasetError(f"clip {i}: truncated visibility payload")
            raw = np.frombuffer(buf, dtype=np.uint8, count=t * j, offset=off)
            if raw.max(initial=0) > 1:
                raise DatasetError(f"clip {i}: visibility flags must be 0 or 1")
            vis = raw.reshape(t, j).astype(bool)
            off += t * j
        clips.append(SkeletonClip(joints, int(label), vis).validate(n_classes, i))
    if off != len(buf):
        raise DatasetError(f"{len(buf) - off} trailing bytes after clip {n_clips - 1}")
    return SkeletonDataset(clips, j, c, list(class_names))


def save_dataset(dataset: SkeletonDataset, path) -> None:
    path = Path(path)
    _atomic_write(path, encode_dataset(dataset))
    meta = {"format": "SKL1", "class_names": dataset.class_names, "joint_count": dataset.joint_count, "coord_dims": dataset.coord_dims}
    _atomic_write(sidecar_path(path), (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())


def load_dataset(path) -> SkeletonDataset:
    path = Path(path)
    names = None
    side = sidecar_path(path)
    if side.exists():
        try:
            names = json.loads(side.read_text())["class_names"]
        except (ValueError, KeyError) as exc:
            raise DatasetError(f"unreadable sidecar {side}: {exc}") from exc
    return decode_dataset(path.read_bytes(), names)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
