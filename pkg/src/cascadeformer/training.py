"""Two-stage training: masked pretraining of extractor + T1 + decoder, then
cascading finetuning of T1 + T2 + cross-attention + classifier.

Randomness is derived from ``(seed, purpose, epoch, ...)`` keys (see
:mod:`cascadeformer.nn.rng`), so a run resumed from an epoch boundary replays
the same batches and masks as an uninterrupted run.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data.transforms import Preprocess, pad_batch
from .data.types import Batch, DatasetError, SkeletonDataset
from .model import MASK_MODES, CascadeFormer, MaskSpec, full_reconstruction_loss, masked_reconstruction_loss
from .nn import functional as F
from .nn.layers import ConfigError
from .nn.optim import OptimizerState, cosine_lr, optimizer_step
from .nn.rng import AUGMENT, MASK, SHUFFLE, make_rng
from .nn.tensor import NonFiniteError, no_grad

log = logging.getLogger(__name__)

SCHEDULES = ("constant", "cosine")
FREEZE_POLICIES = ("none", "all", "last_layer")


class TrainingError(RuntimeError):
    pass


# -- masking -------------------------------------------------------------------------


def make_mask(mode: str, ratio: float, t_valid: int, joints: int, rng: np.random.Generator, t_total: int | None = None) -> MaskSpec:
    """Mask for one clip, shaped ``[1, t_total, J]``; only the first ``t_valid`` frames are maskable.

    ``joint`` masks exactly ⌊ratio·t_valid·J⌋ distinct (frame, joint) positions,
    ``frame`` masks ⌊ratio·t_valid⌋ whole frames, ``none`` masks nothing.
    """
    if mode not in MASK_MODES:
        raise ConfigError(f"unknown mask mode {mode!r}; expected one of {MASK_MODES}")
    t_total = t_valid if t_total is None else t_total
    masked = np.zeros((1, t_total, joints), dtype=bool)
    if mode == "none":
        return MaskSpec(mode, masked, 0.0)
    if not 0 < ratio <= 1:
        raise ConfigError(f"mask ratio must lie in (0, 1], got {ratio}")
    if mode == "joint":
        n = math.floor(ratio * t_valid * joints + 1e-9)
        if n == 0:
            raise ConfigError(f"joint masking at ratio {ratio} selects no positions in a {t_valid}-frame clip")
        frames, cols = np.divmod(rng.choice(t_valid * joints, size=n, replace=False), joints)
        masked[0, frames, cols] = True
    else:
        n = math.floor(ratio * t_valid + 1e-9)
        if n == 0:
            raise ConfigError(f"frame masking at ratio {ratio} selects no frames in a {t_valid}-frame clip")
        masked[0, rng.choice(t_valid, size=n, replace=False)] = True
    return MaskSpec(mode, masked, ratio)


def make_batch_mask(mode: str, ratio: float, frame_valid: np.ndarray, joints: int, rng: np.random.Generator) -> MaskSpec:
    t_total = frame_valid.shape[1]
    rows = [make_mask(mode, ratio, int(v.sum()), joints, rng, t_total).masked for v in frame_valid]
    return MaskSpec(mode, np.concatenate(rows), ratio if mode != "none" else 0.0)


def apply_mask(x: np.ndarray, mask: MaskSpec) -> np.ndarray:
    """Zero the coordinates of masked (frame, joint) positions in ``x[B, C, T, J]``."""
    return np.where(mask.masked[:, None, :, :], np.zeros((), x.dtype), x)


# -- configs and state ------------------------------------------------------------------


@dataclass
class PretrainConfig:
    epochs: int = 100
    batch_size: int = 16
    base_lr: float = 1e-4
    min_lr: float = 0.0
    schedule: str = "constant"
    mask_mode: str = "joint"
    mask_ratio: float = 0.3
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"unknown mask mode {self.mask_mode!r}; expected one of {MASK_MODES}")
        if self.mask_mode != "none" and not 0 < self.mask_ratio <= 1:
            raise ConfigError(f"mask ratio must lie in (0, 1] for {self.mask_mode} masking, got {self.mask_ratio}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")


@dataclass
class FinetuneConfig:
    epochs: int = 100
    batch_size: int = 16
    optimizer: str = "adamw"
    base_lr: float = 1e-5
    min_lr: float = 0.0
    schedule: str = "cosine"
    freeze: str = "none"
    weight_decay: float = 0.01
    momentum: float = 0.9
    from_scratch: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        self.freeze = self.freeze.replace("-", "_")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}")
        if self.freeze not in FREEZE_POLICIES:
            raise ConfigError(f"unknown freeze policy {self.freeze!r}; expected one of {FREEZE_POLICIES}")
        if self.optimizer not in ("adamw", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def optimizer_state(self) -> OptimizerState:
        if self.optimizer == "adamw":
            return OptimizerState("adamw", lr=self.base_lr, weight_decay=self.weight_decay)
        return OptimizerState("sgd", lr=self.base_lr, weight_decay=self.weight_decay, momentum=self.momentum)


@dataclass
class TrainState:
    """Where a stage stands: completed epochs, optimiser steps and per-epoch history."""

    stage: str
    epoch: int = 0
    optimizer: OptimizerState | None = None
    history: list[dict] = field(default_factory=list)


class MetricsLog:
    """Appends one JSON object per line; ``path=None`` keeps records in memory only.

    Records are the history entries plus ``wall_ms``. Timings stay out of
    :class:`TrainState` so that checkpoints depend only on the seed.
    """

    def __init__(self, path=None) -> None:
        self.path = None if path is None else Path(path)
        self.records: list[dict] = []

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


# -- shared loop plumbing ---------------------------------------------------------------


def _lr(schedule: str, step: int, total: int, base: float, min_lr: float) -> float:
    return base if schedule == "constant" else cosine_lr(step, total, base, min_lr)


def _steps_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def _epoch_batches(dataset: SkeletonDataset, batch_size: int, seed: int, epoch: int, preprocess: Preprocess):
    order = make_rng(seed, SHUFFLE, epoch).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        clips = [preprocess(dataset.clips[i], make_rng(seed, AUGMENT, epoch, int(i)), train=True) for i in idx]
        yield pad_batch(clips)


def _elapsed_ms(t0: float) -> float:
    return round((time.perf_counter() - t0) * 1e3, 3)


def _check_finite(value: float, step: int) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss at step {step}")


def _check_labels(dataset: SkeletonDataset, n_classes: int) -> None:
    for i, clip in enumerate(dataset.clips):
        if not 0 <= clip.label < n_classes:
            raise DatasetError(f"clip {i}: label {clip.label} outside [0, {n_classes}) for this model")


# -- pretraining ---------------------------------------------------------------------------


def pretrain_trainable(model: CascadeFormer) -> list[str]:
    parts = model.parts()
    return parts["extractor"] + parts["t1"] + parts["decoder"]


def reconstruction_loss(model: CascadeFormer, batch: Batch, mask: MaskSpec):
    recon = model.reconstruct(apply_mask(batch.x, mask), batch.frame_valid)
    if mask.mode == "none":
        return full_reconstruction_loss(batch.x, recon, batch.frame_valid)
    return masked_reconstruction_loss(batch.x, recon, mask, batch.frame_valid)


def pretrain(
    model: CascadeFormer,
    dataset: SkeletonDataset,
    cfg: PretrainConfig,
    preprocess: Preprocess | None = None,
    state: TrainState | None = None,
    stop_epoch: int | None = None,
    metrics: MetricsLog | None = None,
) -> TrainState:
    """Masked-reconstruction pretraining; continues ``state`` when given.

    Runs until ``cfg.epochs`` (or ``stop_epoch``) epochs are complete. The
    schedule always spans ``cfg.epochs``, so stopping early and resuming
    reproduces an uninterrupted run.
    """
    preprocess = preprocess or Preprocess()
    if len(dataset) == 0:
        raise DatasetError("pretraining needs a non-empty dataset")
    state = state or TrainState("pretrain")
    if state.optimizer is None:
        state.optimizer = OptimizerState("adamw", lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    named = model.state_dict()
    params = {n: named[n] for n in pretrain_trainable(model)}
    per_epoch = _steps_per_epoch(len(dataset), cfg.batch_size)
    total = cfg.epochs * per_epoch
    end = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)
    joints = model.config.joints

    for epoch in range(state.epoch, end):
        t0 = time.perf_counter()
        mask_rng = make_rng(cfg.seed, MASK, epoch)
        loss_sum, seen, lr = 0.0, 0, cfg.base_lr
        for batch in _epoch_batches(dataset, cfg.batch_size, cfg.seed, epoch, preprocess):
            step = state.optimizer.step
            lr = _lr(cfg.schedule, step, total, cfg.base_lr, cfg.min_lr)
            mask = make_batch_mask(cfg.mask_mode, cfg.mask_ratio, batch.frame_valid, joints, mask_rng)
            model.zero_grad()
            try:
                loss = reconstruction_loss(model, batch, mask)
                _check_finite(loss.item(), step)
                loss.backward()
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite values at step {step}: {exc}") from exc
            optimizer_step(params, state.optimizer, lr)
            loss_sum += loss.item() * batch.size
            seen += batch.size
        record = {
            "stage": "pretrain",
            "epoch": epoch,
            "split": "train",
            "loss": loss_sum / seen,
            "accuracy": None,
            "lr": lr,
        }
        state.history.append(record)
        state.epoch = epoch + 1
        if metrics is not None:
            metrics.write({**record, "wall_ms": _elapsed_ms(t0)})
        log.debug("pretrain epoch %d loss %.6f", epoch, record["loss"])
    model.pretrain_epochs = max(getattr(model, "pretrain_epochs", 0), state.epoch)
    return state


# -- finetuning ----------------------------------------------------------------------------


def apply_freeze_policy(model: CascadeFormer, policy: str) -> tuple[list[str], list[str]]:
    """Split parameter names into ``(trainable, frozen)`` for finetuning.

    T2, the cross-attention and the classifier always train. The pretraining
    decoder is never part of the finetune graph and is always frozen.
    """
    policy = policy.replace("-", "_")
    if policy not in FREEZE_POLICIES:
        raise ConfigError(f"unknown freeze policy {policy!r}; expected one of {FREEZE_POLICIES}")
    parts = model.parts()
    always = parts["t2"] + parts["cross"] + parts["head"]
    if policy == "none":
        pretrained = parts["extractor"] + parts["t1"]
    elif policy == "all":
        pretrained = []
    else:
        pretrained = model.t1_layer_names(model.config.t1_layers - 1)
    trainable = set(pretrained + always)
    names = [n for n, _ in model.named_parameters()]
    return [n for n in names if n in trainable], [n for n in names if n not in trainable]


def finetune(
    model: CascadeFormer,
    dataset: SkeletonDataset,
    cfg: FinetuneConfig,
    preprocess: Preprocess | None = None,
    state: TrainState | None = None,
    stop_epoch: int | None = None,
    metrics: MetricsLog | None = None,
    eval_dataset: SkeletonDataset | None = None,
) -> TrainState:
    """Cross-entropy training through T1 → T2 → cross-attention → pooling → classifier."""
    preprocess = preprocess or Preprocess()
    if len(dataset) == 0:
        raise DatasetError("finetuning needs a non-empty dataset")
    if not cfg.from_scratch and getattr(model, "pretrain_epochs", 0) == 0:
        raise ConfigError("model has no pretraining; pretrain first or set from_scratch")
    _check_labels(dataset, model.config.n_classes)
    state = state or TrainState("finetune")
    if state.optimizer is None:
        state.optimizer = cfg.optimizer_state()
    named = model.state_dict()
    trainable, _ = apply_freeze_policy(model, cfg.freeze)
    params = {n: named[n] for n in trainable}
    per_epoch = _steps_per_epoch(len(dataset), cfg.batch_size)
    total = cfg.epochs * per_epoch
    end = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)

    for epoch in range(state.epoch, end):
        t0 = time.perf_counter()
        loss_sum, correct, seen, lr = 0.0, 0, 0, cfg.base_lr
        for batch in _epoch_batches(dataset, cfg.batch_size, cfg.seed, epoch, preprocess):
            step = state.optimizer.step
            lr = _lr(cfg.schedule, step, total, cfg.base_lr, cfg.min_lr)
            model.zero_grad()
            try:
                logits = model.logits(batch.x, batch.frame_valid)
                loss = F.cross_entropy(logits, batch.labels)
                _check_finite(loss.item(), step)
                loss.backward()
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite values at step {step}: {exc}") from exc
            optimizer_step(params, state.optimizer, lr)
            loss_sum += loss.item() * batch.size
            correct += int((logits.data.argmax(axis=1) == batch.labels).sum())
            seen += batch.size
        wall = _elapsed_ms(t0)
        record = {"stage": "finetune", "epoch": epoch, "split": "train", "loss": loss_sum / seen, "accuracy": correct / seen, "lr": lr}
        state.history.append(record)
        if metrics is not None:
            metrics.write({**record, "wall_ms": wall})
        if eval_dataset is not None:
            report = evaluate(model, eval_dataset, preprocess)
            eval_record = {"stage": "finetune", "epoch": epoch, "split": "eval", "loss": report.loss, "accuracy": report.accuracy, "lr": lr}
            state.history.append(eval_record)
            if metrics is not None:
                metrics.write({**eval_record, "wall_ms": _elapsed_ms(t0)})
        state.epoch = epoch + 1
        log.debug("finetune epoch %d loss %.6f acc %.4f", epoch, record["loss"], record["accuracy"])
    return state


# -- evaluation --------------------------------------------------------------------------------


@dataclass
class EvalReport:
    accuracy: float
    per_class: list[float | None]  # None for classes with no clips
    confusion: list[list[int]]  # rows: true class, columns: predicted class
    loss: float
    groups: dict[str, float | None] = field(default_factory=dict)
    group_sizes: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def predict(model: CascadeFormer, dataset: SkeletonDataset, preprocess: Preprocess | None = None, batch_size: int = 64) -> np.ndarray:
    """Logits ``[N, n_classes]`` in dataset order, without augmentation."""
    preprocess = preprocess or Preprocess()
    out = []
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            clips = [preprocess(c, None, train=False) for c in dataset.clips[start : start + batch_size]]
            batch = pad_batch(clips)
            out.append(model.logits(batch.x, batch.frame_valid).data)
    return np.concatenate(out)


def evaluate(
    model: CascadeFormer,
    dataset: SkeletonDataset,
    preprocess: Preprocess | None = None,
    class_groups: dict[str, list[int]] | None = None,
    batch_size: int = 64,
) -> EvalReport:
    if len(dataset) == 0:
        raise DatasetError("cannot evaluate on an empty dataset")
    n_classes = model.config.n_classes
    _check_labels(dataset, n_classes)
    logits = predict(model, dataset, preprocess, batch_size)
    labels = np.array([c.label for c in dataset.clips])
    pred = logits.argmax(axis=1)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    counts = confusion.sum(axis=1)
    per_class = [float(confusion[k, k] / counts[k]) if counts[k] else None for k in range(n_classes)]
    z = logits.astype(np.float64)
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(len(labels)), labels]))

    groups, sizes = {}, {}
    for name, members in (class_groups or {}).items():
        bad = [k for k in members if not 0 <= int(k) < n_classes]
        if bad:
            raise ConfigError(f"group {name!r} names unknown classes {bad}")
        sel = np.isin(labels, np.asarray(members, dtype=np.int64))
        sizes[name] = int(sel.sum())
        groups[name] = float((pred[sel] == labels[sel]).mean()) if sel.any() else None
    accuracy = float(np.trace(confusion) / confusion.sum())
    return EvalReport(accuracy, per_class, confusion.tolist(), loss, groups, sizes)
