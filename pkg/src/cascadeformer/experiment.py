"""One complete run: split, pretrain, finetune and evaluate.

Used by ``cascadeformer ablate`` for every grid row and by the acceptance
suite. Defaults describe the desk-scale synthetic protocol.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .checkpoint import save_checkpoint
from .data.transforms import REPRESENTATIONS, AugmentConfig, Preprocess, ntu_recipe, nucla_recipe, penn_action_recipe
from .data.types import SkeletonDataset, stratified_split
from .model import CascadeFormer, ModelConfig
from .nn.layers import ConfigError
from .nn.rng import SPLIT, make_rng
from .training import EvalReport, FinetuneConfig, MetricsLog, PretrainConfig, TrainState, evaluate, finetune, pretrain

RECIPES = ("plain", "penn-action", "nucla", "ntu")


@dataclass
class PreprocessSpec:
    """Serialisable description of a :class:`Preprocess` pipeline."""

    recipe: str = "plain"
    representation: str = "joints"
    frames: int = 64
    augment: bool = False

    def __post_init__(self) -> None:
        if self.recipe not in RECIPES:
            raise ConfigError(f"unknown preprocessing recipe {self.recipe!r}; expected one of {RECIPES}")
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"unknown representation {self.representation!r}; expected one of {REPRESENTATIONS}")
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")

    def build(self) -> Preprocess:
        if self.recipe == "penn-action":
            pre = penn_action_recipe()
        elif self.recipe == "nucla":
            pre = nucla_recipe()
        elif self.recipe == "ntu":
            pre = ntu_recipe()
        else:
            pre = Preprocess(augment=AugmentConfig() if self.augment else None)
        pre.frames = self.frames
        pre.representation = self.representation
        return pre

    def to_dict(self) -> dict:
        return asdict(self)


def _default_model() -> dict:
    return {"variant": "v1_0", "embed_dim": 104, "t1_layers": 2, "t2_layers": 1, "n_heads": 4}


def _default_pretrain() -> dict:
    return {"epochs": 50}


def _default_finetune() -> dict:
    return {"epochs": 100}


@dataclass
class ExperimentConfig:
    """Everything that determines a run besides the data.

    ``model`` holds :class:`ModelConfig` fields except the data-derived
    ``joints``, ``coord_dims`` and ``n_classes``; ``pretrain`` and ``finetune``
    hold the stage configs without their seeds, which come from ``seed``.
    """

    model: dict = field(default_factory=_default_model)
    pretrain: dict = field(default_factory=_default_pretrain)
    finetune: dict = field(default_factory=_default_finetune)
    preprocess: dict = field(default_factory=dict)
    seed: int = 0
    split_seed: int = 0
    test_fraction: float = 0.2
    from_scratch: bool = False

    def __post_init__(self) -> None:
        for name in ("joints", "coord_dims", "n_classes"):
            if name in self.model:
                raise ConfigError(f"model.{name} is taken from the data and cannot be set")
        for section in ("pretrain", "finetune"):
            if "seed" in getattr(self, section):
                raise ConfigError(f"{section}.seed is taken from the experiment seed")
        if "from_scratch" in self.finetune:
            raise ConfigError("set from_scratch at the top level of the experiment config")
        # validate eagerly so a bad grid fails before any training
        self.preprocess_spec()
        self.pretrain_config()
        self.finetune_config()

    def preprocess_spec(self) -> PreprocessSpec:
        return PreprocessSpec(**self.preprocess)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(**self.pretrain, seed=self.seed)

    def finetune_config(self) -> FinetuneConfig:
        return FinetuneConfig(**self.finetune, seed=self.seed, from_scratch=self.from_scratch)

    def model_config(self, dataset: SkeletonDataset) -> ModelConfig:
        joints, dims = self.preprocess_spec().build().output_shape(dataset.joint_count, dataset.coord_dims)
        return ModelConfig(**self.model, joints=joints, coord_dims=dims, n_classes=dataset.n_classes)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        base = cls()
        merged = {}
        for key in known:
            if key in ("model", "pretrain", "finetune", "preprocess"):
                merged[key] = {**getattr(base, key), **d.get(key, {})}
            else:
                merged[key] = d.get(key, getattr(base, key))
        return cls(**merged)


@dataclass
class ExperimentResult:
    accuracy: float
    report: EvalReport
    pretrain_state: TrainState | None
    finetune_state: TrainState
    artifacts: dict[str, str]
    n_train: int
    n_test: int


def run_experiment(
    cfg: ExperimentConfig,
    dataset: SkeletonDataset,
    out_dir=None,
    metrics: MetricsLog | None = None,
    eval_dataset: SkeletonDataset | None = None,
) -> ExperimentResult:
    """Train on a stratified split of ``dataset`` (or all of it when ``eval_dataset`` is given) and evaluate."""
    if eval_dataset is None:
        train, test = stratified_split(dataset, cfg.test_fraction, make_rng(cfg.split_seed, SPLIT))
    else:
        train, test = dataset, eval_dataset
    spec = cfg.preprocess_spec()
    pre = spec.build()
    model = CascadeFormer(cfg.model_config(dataset), seed=cfg.seed)
    model.meta = {"preprocess": spec.to_dict(), "class_names": list(dataset.class_names)}
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, str] = {}

    pre_state = None
    if not cfg.from_scratch:
        pre_state = pretrain(model, train, cfg.pretrain_config(), pre, metrics=metrics)
        if out is not None:
            save_checkpoint(out / "pretrain.ckpt", model, pre_state)
            artifacts["pretrain_checkpoint"] = str(out / "pretrain.ckpt")
    ft_state = finetune(model, train, cfg.finetune_config(), pre, metrics=metrics)
    if out is not None:
        save_checkpoint(out / "finetune.ckpt", model, ft_state)
        artifacts["finetune_checkpoint"] = str(out / "finetune.ckpt")
    report = evaluate(model, test, pre)
    return ExperimentResult(report.accuracy, report, pre_state, ft_state, artifacts, len(train), len(test))
