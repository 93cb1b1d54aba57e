"""Command-line entry point: ``cascadeformer <command> [flags]``.

Commands: synth, split, pretrain, finetune, eval, ablate, inspect, replay.
Every command writes a run manifest next to its outputs. Failures exit
nonzero with one line on stderr of the form ``error[<kind>]: <message>``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data.io import load_dataset, save_dataset
from .data.synthetic import generate_synthetic
from .data.transforms import REPRESENTATIONS
from .data.types import DatasetError, SkeletonDataset, stratified_split
from .experiment import RECIPES, ExperimentConfig, PreprocessSpec, run_experiment
from .model import CascadeFormer, ModelConfig, normalize_variant
from .nn.layers import ConfigError
from .nn.rng import SPLIT, make_rng
from .nn.tensor import NonFiniteError, ShapeError
from .training import FinetuneConfig, MetricsLog, PretrainConfig, TrainingError, evaluate, finetune, pretrain

log = logging.getLogger("cascadeformer")

METRICS_ENV = "CASCADEFORMER_METRICS"
ABLATION_AXES = {
    "mask-strategy": ["joint", "frame", "none"],
    "decoder": ["linear", "mlp", "mlp_residual"],
    "freeze": ["none", "all", "last_layer"],
    "representation": ["subtract", "concat", "parameterize"],
}

_ERROR_KINDS = (
    (ConfigError, "config"),
    (DatasetError, "data"),
    (CheckpointError, "checkpoint"),
    (ShapeError, "shape"),
    (NonFiniteError, "training"),
    (TrainingError, "training"),
    (json.JSONDecodeError, "json"),
    (ValueError, "value"),
    (OSError, "io"),
)


class UsageError(Exception):
    pass


# -- manifest --------------------------------------------------------------------------------


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@dataclass
class RunManifest:
    """What ran, with which resolved config, and what it produced."""

    command: str
    argv: list[str]
    config: dict
    seed: int | None
    started_at: str
    finished_at: str | None = None
    artifacts: dict[str, str] = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    version: str = __version__

    def write(self, path) -> Path:
        path = Path(path)
        self.finished_at = _now()
        _write_atomic(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _metrics_path(default: Path) -> Path:
    env = os.environ.get(METRICS_ENV)
    return Path(env) if env else default


def _fresh_metrics(path: Path) -> MetricsLog:
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists() and os.environ.get(METRICS_ENV) is None:
        path.unlink()
    return MetricsLog(path)


# -- shared helpers ------------------------------------------------------------------------------


def _load(path) -> SkeletonDataset:
    ds = load_dataset(path)
    if len(ds) == 0:
        raise DatasetError(f"{path}: dataset has no clips")
    return ds


def _model_overrides(args) -> dict:
    out = {}
    for flag, key in (
        ("variant", "variant"),
        ("embed_dim", "embed_dim"),
        ("t1_layers", "t1_layers"),
        ("t2_layers", "t2_layers"),
        ("heads", "n_heads"),
        ("decoder", "decoder"),
        ("conv_kernel", "conv_kernel"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = normalize_variant(value) if key == "variant" else value
    return out


def _preprocess_spec(args, default: dict | None = None) -> PreprocessSpec:
    base = dict(default or {})
    for key in ("recipe", "representation", "frames"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    if getattr(args, "augment", False):
        base["augment"] = True
    return PreprocessSpec(**base)


def _check_data_matches(model: CascadeFormer, ds: SkeletonDataset, spec: PreprocessSpec, source: str) -> None:
    cfg = model.config
    joints, dims = spec.build().output_shape(ds.joint_count, ds.coord_dims)
    if (joints, dims) != (cfg.joints, cfg.coord_dims):
        raise ConfigError(
            f"{source} expects J={cfg.joints}, C={cfg.coord_dims} after preprocessing but the data gives J={joints}, C={dims}"
        )
    if ds.n_classes > cfg.n_classes:
        raise ConfigError(f"{source} has {cfg.n_classes} classes but the data has {ds.n_classes}")


def _print_table(headers: list[str], rows: list[list], file=None) -> None:
    cells = [[str(h) for h in headers]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    for n, r in enumerate(cells):
        print("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))), file=file)
        if n == 0:
            print("  ".join("-" * w for w in widths), file=file)


def _pct(x: float | None) -> str:
    return "n/a" if x is None else f"{100 * x:.2f}%"


# -- commands -----------------------------------------------------------------------------------


def cmd_synth(args, argv) -> int:
    started = _now()
    ds = generate_synthetic(args.classes, args.clips_per_class, args.frames, args.joints, args.dims, args.noise, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    for name, n in zip(ds.class_names, ds.class_counts()):
        print(f"{name}\t{n}")
    print(f"wrote {len(ds)} clips to {out}")
    config = {k: getattr(args, k) for k in ("classes", "clips_per_class", "frames", "joints", "dims", "noise", "seed")}
    m = RunManifest("synth", argv, config, args.seed, started, artifacts={"data": str(out)}, results={"sha256": _sha256(out)})
    m.write(out.with_name(out.name + ".manifest.json"))
    return 0


def cmd_split(args, argv) -> int:
    started = _now()
    ds = _load(args.data)
    train, test = stratified_split(ds, args.test_fraction, make_rng(args.seed, SPLIT))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train.skl")
    save_dataset(test, out / "test.skl")
    print(f"train {len(train)} clips, test {len(test)} clips -> {out}")
    config = {"data": str(args.data), "data_sha256": _sha256(args.data), "test_fraction": args.test_fraction}
    artifacts = {"train": str(out / "train.skl"), "test": str(out / "test.skl")}
    RunManifest("split", argv, config, args.seed, started, artifacts=artifacts).write(out / "manifest.json")
    return 0


def cmd_pretrain(args, argv) -> int:
    started = _now()
    if args.mask_mode == "none" and args.mask_ratio is not None:
        log.warning("--mask-ratio %s is ignored with --mask-mode none", args.mask_ratio)
    ds = _load(args.data)
    spec = _preprocess_spec(args)
    pre = spec.build()
    joints, dims = pre.output_shape(ds.joint_count, ds.coord_dims)
    mcfg = ModelConfig(**_model_overrides(args), joints=joints, coord_dims=dims, n_classes=max(ds.n_classes, 1))
    pcfg = PretrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        base_lr=args.lr,
        min_lr=args.min_lr,
        schedule=args.schedule,
        mask_mode=args.mask_mode,
        mask_ratio=0.3 if args.mask_ratio is None else args.mask_ratio,
        weight_decay=args.weight_decay,
        seed=args.seed,
    )
    model = CascadeFormer(mcfg, seed=args.seed)
    model.meta = {"preprocess": spec.to_dict(), "class_names": list(ds.class_names)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = _metrics_path(out / "metrics.jsonl")
    state = pretrain(model, ds, pcfg, pre, metrics=_fresh_metrics(metrics_path))
    save_checkpoint(out / "model.ckpt", model, state)
    final = state.history[-1]["loss"]
    print(f"pretrained {pcfg.epochs} epochs, final reconstruction loss {final:.6f} -> {out / 'model.ckpt'}")
    config = {
        "data": str(args.data),
        "data_sha256": _sha256(args.data),
        "model": mcfg.to_dict(),
        "pretrain": asdict(pcfg),
        "preprocess": spec.to_dict(),
    }
    artifacts = {"checkpoint": str(out / "model.ckpt"), "metrics": str(metrics_path)}
    m = RunManifest("pretrain", argv, config, args.seed, started, artifacts=artifacts, results={"final_loss": final})
    m.write(out / "manifest.json")
    return 0


def cmd_finetune(args, argv) -> int:
    started = _now()
    ds = _load(args.data)
    if args.pretrained:
        model, _ = load_checkpoint(args.pretrained)
        if model.pretrain_epochs == 0:
            raise ConfigError(f"{args.pretrained} holds no pretraining; use --from-scratch instead")
        stored = PreprocessSpec(**model.meta.get("preprocess", {}))
        spec = _preprocess_spec(args, stored.to_dict())
        if spec != stored:
            raise ConfigError(f"preprocessing {spec.to_dict()} differs from the pretraining run's {stored.to_dict()}")
        ignored = _model_overrides(args)
        if ignored:
            log.warning("model flags %s are ignored when loading --pretrained", sorted(ignored))
        _check_data_matches(model, ds, spec, f"checkpoint {args.pretrained}")
    else:
        spec = _preprocess_spec(args)
        joints, dims = spec.build().output_shape(ds.joint_count, ds.coord_dims)
        mcfg = ModelConfig(**_model_overrides(args), joints=joints, coord_dims=dims, n_classes=max(ds.n_classes, 1))
        model = CascadeFormer(mcfg, seed=args.seed)
        model.meta = {"preprocess": spec.to_dict(), "class_names": list(ds.class_names)}
    fcfg = FinetuneConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        optimizer=args.optimizer,
        base_lr=args.lr,
        min_lr=args.min_lr,
        schedule=args.schedule,
        freeze=args.freeze,
        weight_decay=args.weight_decay,
        momentum=args.momentum,
        from_scratch=args.from_scratch,
        seed=args.seed,
    )
    pre = spec.build()
    eval_ds = None
    if args.eval_data:
        eval_ds = _load(args.eval_data)
        _check_data_matches(model, eval_ds, spec, "model")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = _metrics_path(out / "metrics.jsonl")
    state = finetune(model, ds, fcfg, pre, metrics=_fresh_metrics(metrics_path), eval_dataset=eval_ds)
    save_checkpoint(out / "model.ckpt", model, state)
    train_rows = [h for h in state.history if h["split"] == "train"]
    results = {"final_loss": train_rows[-1]["loss"], "final_train_accuracy": train_rows[-1]["accuracy"]}
    eval_rows = [h for h in state.history if h["split"] == "eval"]
    if eval_rows:
        results["final_eval_accuracy"] = eval_rows[-1]["accuracy"]
    print(
        f"finetuned {fcfg.epochs} epochs, final loss {results['final_loss']:.6f}, "
        f"train accuracy {_pct(results['final_train_accuracy'])} -> {out / 'model.ckpt'}"
    )
    config = {
        "data": str(args.data),
        "data_sha256": _sha256(args.data),
        "pretrained": None if args.pretrained is None else str(args.pretrained),
        "pretrained_sha256": None if args.pretrained is None else _sha256(args.pretrained),
        "eval_data": args.eval_data,
        "model": model.config.to_dict(),
        "finetune": asdict(fcfg),
        "preprocess": spec.to_dict(),
    }
    artifacts = {"checkpoint": str(out / "model.ckpt"), "metrics": str(metrics_path)}
    RunManifest("finetune", argv, config, args.seed, started, artifacts=artifacts, results=results).write(out / "manifest.json")
    return 0


def _load_groups(path, class_names: list[str], n_classes: int) -> dict[str, list[int]]:
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: groups must be a JSON object mapping group name to a class list")
    groups = {}
    for name, members in raw.items():
        if not isinstance(members, list):
            raise ConfigError(f"{path}: group {name!r} must list classes")
        ids = []
        for m in members:
            if isinstance(m, str) and m in class_names:
                ids.append(class_names.index(m))
            elif isinstance(m, int) and not isinstance(m, bool) and 0 <= m < n_classes:
                ids.append(m)
            else:
                raise ConfigError(f"{path}: group {name!r} names unknown class {m!r}")
        groups[name] = ids
    return groups


def cmd_eval(args, argv) -> int:
    started = _now()
    model, _ = load_checkpoint(args.checkpoint)
    ds = _load(args.data)
    spec = PreprocessSpec(**model.meta.get("preprocess", {}))
    _check_data_matches(model, ds, spec, f"checkpoint {args.checkpoint}")
    names = list(model.meta.get("class_names") or ds.class_names)
    names += [f"class_{k}" for k in range(len(names), model.config.n_classes)]
    groups = _load_groups(args.groups, names, model.config.n_classes) if args.groups else None
    report = evaluate(model, ds, spec.build(), groups, batch_size=args.batch_size)
    counts = np.bincount([c.label for c in ds.clips], minlength=model.config.n_classes)

    rows = [["overall", len(ds), _pct(report.accuracy)]]
    rows += [[f"class {k} ({names[k]})", int(counts[k]), _pct(acc)] for k, acc in enumerate(report.per_class)]
    rows += [[f"group {g}", report.group_sizes[g], _pct(acc)] for g, acc in report.groups.items()]
    _print_table(["split", "clips", "accuracy"], rows)

    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval"
    out.mkdir(parents=True, exist_ok=True)
    payload = {**report.to_dict(), "class_names": names, "class_sizes": counts.tolist(), "n": len(ds)}
    _write_atomic(out / "report.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    config = {
        "checkpoint": str(args.checkpoint),
        "checkpoint_sha256": _sha256(args.checkpoint),
        "data": str(args.data),
        "data_sha256": _sha256(args.data),
        "groups": None if groups is None else groups,
    }
    m = RunManifest("eval", argv, config, model.seed, started, artifacts={"report": str(out / "report.json")})
    m.results = {"accuracy": report.accuracy}
    m.write(out / "manifest.json")
    return 0


def _row_config(base: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    d = base.to_dict()
    if axis == "mask-strategy":
        d["pretrain"]["mask_mode"] = value
    elif axis == "decoder":
        d["model"]["decoder"] = value
    elif axis == "freeze":
        d["finetune"]["freeze"] = value
    else:
        d["preprocess"]["representation"] = value
    return ExperimentConfig(**d)


def cmd_ablate(args, argv) -> int:
    base = ExperimentConfig.from_dict(json.loads(Path(args.base_config).read_text()) if args.base_config else {})
    if args.seed is not None:
        base.seed = args.seed
    if args.pretrain_epochs is not None:
        base.pretrain["epochs"] = args.pretrain_epochs
    if args.finetune_epochs is not None:
        base.finetune["epochs"] = args.finetune_epochs
    base = ExperimentConfig(**base.to_dict())
    values = list(ABLATION_AXES[args.axis])
    if args.axis == "representation" and args.include_baseline:
        values = ["joints"] + values
    rows_cfg = [(v, _row_config(base, args.axis, v)) for v in values]

    ds = _load(args.data)
    eval_ds = _load(args.eval_data) if args.eval_data else None
    data_hash = _sha256(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value, cfg in rows_cfg:
        started = _now()
        row_dir = out / value
        row_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = _metrics_path(row_dir / "metrics.jsonl")
        result = run_experiment(cfg, ds, row_dir, _fresh_metrics(metrics_path), eval_ds)
        row = {"axis": args.axis, "value": value, "accuracy": result.accuracy, "n_train": result.n_train, "n_test": result.n_test}
        rows.append(row)
        config = {"data": str(args.data), "data_sha256": data_hash, "eval_data": args.eval_data, "axis": args.axis, "experiment": cfg.to_dict()}
        artifacts = {**result.artifacts, "metrics": str(metrics_path)}
        RunManifest("ablate", argv, config, cfg.seed, started, artifacts=artifacts, results=row).write(row_dir / "manifest.json")
        log.info("%s=%s accuracy %.4f", args.axis, value, result.accuracy)

    _print_table([args.axis, "accuracy"], [[r["value"], _pct(r["accuracy"])] for r in rows])
    table = {"axis": args.axis, "seed": base.seed, "base_config": base.to_dict(), "rows": rows}
    _write_atomic(out / "table.json", json.dumps(table, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_inspect(args, argv) -> int:
    started = _now()
    model, state = load_checkpoint(args.checkpoint)
    print(f"checkpoint {args.checkpoint}")
    print(f"config {json.dumps(model.config.to_dict(), sort_keys=True)}")
    print(f"seed {model.seed}  pretrain epochs {model.pretrain_epochs}")
    if state is not None:
        steps = state.optimizer.step if state.optimizer else 0
        print(f"stage {state.stage}  epochs {state.epoch}  optimizer steps {steps}")
    named = model.state_dict()
    other = None
    if args.diff:
        other_model, _ = load_checkpoint(args.diff)
        other = other_model.state_dict()
        if [(n, p.shape) for n, p in named.items()] != [(n, p.shape) for n, p in other.items()]:
            raise CheckpointError(f"{args.checkpoint} and {args.diff} have different parameter layouts")
    rows, summary = [], {}
    for part, names in model.parts().items():
        size = sum(named[n].data.size for n in names)
        row = [part, size]
        entry = {"parameters": size}
        if other is not None:
            delta = max((float(np.max(np.abs(named[n].data - other[n].data))) for n in names), default=0.0)
            row.append(f"{delta:.3e}")
            entry["max_abs_diff"] = delta
        rows.append(row)
        summary[part] = entry
    headers = ["part", "parameters"] + (["max |diff|"] if other is not None else [])
    rows.append(["total", model.num_parameters()] + ([""] if other is not None else []))
    _print_table(headers, rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_atomic(out / "inspect.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
        config = {"checkpoint": str(args.checkpoint), "diff": args.diff}
        RunManifest("inspect", argv, config, model.seed, started, artifacts={"summary": str(out / "inspect.json")}).write(out / "manifest.json")
    return 0


def cmd_replay(args, argv) -> int:
    manifest = RunManifest.read(args.manifest)
    if manifest.command == "replay":
        raise ConfigError("cannot replay a replay manifest")
    old = list(manifest.argv)
    if "--out" not in old:
        raise ConfigError(f"{args.manifest}: recorded argv has no --out to redirect")
    i = old.index("--out")
    new = old[: i + 1] + [str(args.out)] + old[i + 2 :]
    log.info("replaying: %s", " ".join(new))
    return main(new)


# -- parser --------------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_model_flags(p, defaults: bool) -> None:
    d = ModelConfig()
    p.add_argument("--variant", choices=["1.0", "1.1", "1.2"], default="1.0" if defaults else None)
    p.add_argument("--embed-dim", type=int, default=d.embed_dim if defaults else None)
    p.add_argument("--t1-layers", type=int, default=d.t1_layers if defaults else None)
    p.add_argument("--t2-layers", type=int, default=d.t2_layers if defaults else None)
    p.add_argument("--heads", type=int, default=d.n_heads if defaults else None)
    p.add_argument("--decoder", choices=["linear", "mlp", "mlp_residual"], default=None)
    p.add_argument("--conv-kernel", type=int, default=None)


def _add_preprocess_flags(p) -> None:
    p.add_argument("--recipe", choices=RECIPES, default=None)
    p.add_argument("--representation", choices=REPRESENTATIONS, default=None)
    p.add_argument("--frames", type=int, default=None, help="sampled clip length for sampling recipes")
    p.add_argument("--augment", action="store_true", help="enable augmentation for the plain recipe")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cascadeformer", description="Masked pretraining and cascading finetuning for skeleton action recognition.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic SKL1 dataset")
    p.add_argument("--classes", type=_positive_int, default=4)
    p.add_argument("--clips-per-class", type=_positive_int, default=20)
    p.add_argument("--frames", type=_positive_int, default=32)
    p.add_argument("--joints", type=_positive_int, default=13)
    p.add_argument("--dims", type=int, choices=[2, 3], default=2)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="stratified train/test split of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("pretrain", help="masked-reconstruction pretraining")
    p.add_argument("--data", required=True)
    _add_model_flags(p, defaults=False)
    _add_preprocess_flags(p)
    p.add_argument("--epochs", type=_positive_int, default=100)
    p.add_argument("--batch-size", type=_positive_int, default=16)
    p.add_argument("--mask-ratio", type=float, default=None, help="default 0.3")
    p.add_argument("--mask-mode", choices=["joint", "frame", "none"], default="joint")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--min-lr", type=float, default=0.0)
    p.add_argument("--schedule", choices=["constant", "cosine"], default="constant")
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="cascading finetuning")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pretrained", help="pretraining checkpoint")
    src.add_argument("--from-scratch", action="store_true")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", default=None, help="held-out data evaluated after every epoch")
    _add_model_flags(p, defaults=False)
    _add_preprocess_flags(p)
    p.add_argument("--epochs", type=_positive_int, default=100)
    p.add_argument("--batch-size", type=_positive_int, default=16)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--min-lr", type=float, default=0.0)
    p.add_argument("--optimizer", choices=["adamw", "sgd"], default="adamw")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--schedule", choices=["constant", "cosine"], default="cosine")
    p.add_argument("--freeze", choices=["none", "all", "last-layer"], default="none")
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="accuracy report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--groups", default=None, help="JSON object mapping group name to a list of class ids or names")
    p.add_argument("--batch-size", type=_positive_int, default=64)
    p.add_argument("--out", default=None, help="report directory (default: <checkpoint dir>/eval)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a three-row ablation grid")
    p.add_argument("--axis", choices=list(ABLATION_AXES), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", default=None, help="evaluate on this set instead of a split of --data")
    p.add_argument("--base-config", default=None, help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pretrain-epochs", type=_positive_int, default=None)
    p.add_argument("--finetune-epochs", type=_positive_int, default=None)
    p.add_argument("--include-baseline", action="store_true", help="representation axis: add a raw-joints row")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="summarise a checkpoint, optionally diffing another")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--diff", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error[usage]: {_one_line(exc)}", file=sys.stderr)
        return 2
    if not logging.getLogger().handlers:
        logging.basicConfig(level=args.log_level, format="%(levelname)s: %(message)s", stream=sys.stderr)
    log.setLevel(args.log_level)
    try:
        return args.func(args, argv)
    except Exception as exc:
        for cls, kind in _ERROR_KINDS:
            if isinstance(exc, cls):
                print(f"error[{kind}]: {_one_line(exc)}", file=sys.stderr)
                return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
