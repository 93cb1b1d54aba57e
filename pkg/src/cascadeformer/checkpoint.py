"""Checkpoint files.

Layout::

    b"CFCK"                 magic
    u32 format_version
    u32 header_length
    header                  UTF-8 JSON, sorted keys, no whitespace
    parameter blocks        little-endian f32, in canonical parameter order
    optimizer blocks        little-endian f32, in the order listed in the header

The header records the model config, init seed, parameter names and shapes,
the training stage, completed epochs, optimiser hyperparameters, step
counter and buffer layout, the per-epoch history and free-form ``meta``.
Serialisation is deterministic, so save → load → save yields identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .model import CascadeFormer, ModelConfig
from .nn.optim import OptimizerState
from .training import TrainState

MAGIC = b"CFCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


def encode_checkpoint(model: CascadeFormer, state: TrainState | None = None) -> bytes:
    params = list(model.named_parameters())
    opt = state.optimizer if state is not None else None
    buffers = []
    if opt is not None:
        for name, _ in params:
            for bname in opt.buffer_names():
                if bname in opt.buffers.get(name, {}):
                    buffers.append((name, bname))
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "seed": model.seed,
        "pretrain_epochs": model.pretrain_epochs,
        "meta": model.meta,
        "params": [[name, list(p.shape)] for name, p in params],
        "train_state": None
        if state is None
        else {
            "stage": state.stage,
            "epoch": state.epoch,
            "history": state.history,
            "optimizer": None
            if opt is None
            else {**opt.hyperparameters(), "step": opt.step, "buffers": [[n, b] for n, b in buffers]},
        },
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blocks = [np.ascontiguousarray(p.data, dtype="<f4").tobytes() for _, p in params]
    blocks += [np.ascontiguousarray(opt.buffers[n][b], dtype="<f4").tobytes() for n, b in buffers]
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + b"".join(blocks)


def decode_checkpoint(buf: bytes, dtype=np.float32) -> tuple[CascadeFormer, TrainState | None]:
    if len(buf) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint: missing prefix")
    magic, version, head_len = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}, expected {FORMAT_VERSION}")
    off = _PREFIX.size
    if off + head_len > len(buf):
        raise CheckpointError("truncated checkpoint: header")
    try:
        header = json.loads(buf[off : off + head_len].decode())
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    off += head_len
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"header format version {header.get('format_version')} != {FORMAT_VERSION}")

    model = CascadeFormer(ModelConfig.from_dict(header["config"]), seed=header["seed"], dtype=dtype)
    model.pretrain_epochs = header["pretrain_epochs"]
    model.meta = header.get("meta") or {}
    named = model.state_dict()
    expected = [[n, list(p.shape)] for n, p in named.items()]
    if header["params"] != expected:
        raise CheckpointError("parameter layout in checkpoint does not match its config")

    def take(shape) -> np.ndarray:
        nonlocal off
        n = int(np.prod(shape)) * 4
        if off + n > len(buf):
            raise CheckpointError("truncated checkpoint: parameter payload")
        arr = np.frombuffer(buf, dtype="<f4", count=n // 4, offset=off).reshape(shape).astype(dtype)
        off += n
        return arr

    values = {name: take(shape) for name, shape in header["params"]}
    state = None
    ts = header["train_state"]
    if ts is not None:
        opt = None
        if ts["optimizer"] is not None:
            o = dict(ts["optimizer"])
            layout = o.pop("buffers")
            step = o.pop("step")
            opt = OptimizerState(**o)
            opt.step = step
            for pname, bname in layout:
                if pname not in named:
                    raise CheckpointError(f"optimizer buffer for unknown parameter {pname!r}")
                opt.buffers.setdefault(pname, {})[bname] = take(named[pname].shape)
        state = TrainState(ts["stage"], ts["epoch"], opt, ts["history"])
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} unexpected trailing bytes in checkpoint")

    for name, arr in values.items():
        named[name].data = arr
    return model, state


def save_checkpoint(path, model: CascadeFormer, state: TrainState | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(model, state))
    os.replace(tmp, path)


def load_checkpoint(path, dtype=np.float32) -> tuple[CascadeFormer, TrainState | None]:
    return decode_checkpoint(Path(path).read_bytes(), dtype)
