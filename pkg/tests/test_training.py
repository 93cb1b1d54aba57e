import json
import math

import numpy as np
import pytest

from cascadeformer.data import DatasetError, SkeletonDataset, pad_batch
from cascadeformer.model import CascadeFormer, ModelConfig, full_reconstruction_loss, masked_reconstruction_loss
from cascadeformer.nn import ConfigError, Tensor, cosine_lr
from cascadeformer.nn import functional as F
from cascadeformer.training import (
    FinetuneConfig,
    MetricsLog,
    PretrainConfig,
    TrainingError,
    apply_freeze_policy,
    evaluate,
    finetune,
    make_batch_mask,
    make_mask,
    pretrain,
    reconstruction_loss,
)


def small_model(seed=0, t1_layers=1, n_classes=4, **kw):
    cfg = ModelConfig(coord_dims=2, joints=5, embed_dim=16, t1_layers=t1_layers, t2_layers=1, n_heads=2, n_classes=n_classes, **kw)
    return CascadeFormer(cfg, seed=seed)


def snapshot(model):
    return {n: p.data.copy() for n, p in model.named_parameters()}


# -- masks ------------------------------------------------------------------------------------


def test_joint_mask_count_is_floor_of_ratio_times_positions():
    for seed in range(20):
        spec = make_mask("joint", 0.3, 16, 13, np.random.default_rng(seed))
        assert spec.count == math.floor(0.3 * 16 * 13) == 62


def test_frame_mask_rows_are_all_or_nothing():
    spec = make_mask("frame", 0.3, 10, 13, np.random.default_rng(0))
    rows = spec.masked[0]
    assert rows.all(axis=1).sum() == 3
    assert np.all(rows.all(axis=1) | ~rows.any(axis=1))


def test_none_mask_is_empty():
    spec = make_mask("none", 0.3, 10, 13, np.random.default_rng(0))
    assert spec.count == 0 and spec.ratio == 0.0


@pytest.mark.parametrize("t,j,ratio", [(16, 13, 0.3), (7, 5, 0.45), (31, 3, 0.1), (12, 13, 0.9)])
def test_mask_ratio_within_one_position(t, j, ratio):
    joint = make_mask("joint", ratio, t, j, np.random.default_rng(1)).masked.mean()
    frame = make_mask("frame", ratio, t, j, np.random.default_rng(1)).masked.mean()
    assert abs(joint - ratio) <= 1 / (t * j)
    # whole frames are the unit in frame mode
    assert abs(frame - ratio) <= 1 / t


def test_only_valid_frames_are_masked():
    valid = np.array([[1] * 6 + [0] * 4, [1] * 10], bool)
    for mode in ("joint", "frame"):
        spec = make_batch_mask(mode, 0.5, valid, 4, np.random.default_rng(2))
        assert not spec.masked[0, 6:].any()
        assert spec.masked[0].sum() == (12 if mode == "joint" else 12)


def test_mask_selecting_nothing_is_error():
    with pytest.raises(ConfigError, match="no positions"):
        make_mask("joint", 0.01, 2, 3, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        PretrainConfig(mask_ratio=0.0)


def test_reconstruction_loss_routes_by_mode(small_dataset):
    m = small_model()
    batch = pad_batch([c for c in small_dataset.clips[:3]])
    joint = make_batch_mask("joint", 0.3, batch.frame_valid, 5, np.random.default_rng(0))
    none = make_batch_mask("none", 0.3, batch.frame_valid, 5, np.random.default_rng(0))
    recon = m.reconstruct(batch.x, batch.frame_valid)
    assert reconstruction_loss(m, batch, none).item() == full_reconstruction_loss(batch.x, recon, batch.frame_valid).item()
    masked_recon = m.reconstruct(np.where(joint.masked[:, None], 0, batch.x).astype(np.float32), batch.frame_valid)
    assert reconstruction_loss(m, batch, joint).item() == masked_reconstruction_loss(batch.x, masked_recon, joint, batch.frame_valid).item()
    # crafted probe: error only at unmasked positions is invisible to the masked loss
    probe = Tensor(np.where(joint.masked[:, None], batch.x, batch.x + 1.0))
    assert masked_reconstruction_loss(batch.x, probe, joint, batch.frame_valid).item() == 0.0
    assert full_reconstruction_loss(batch.x, probe, batch.frame_valid).item() > 0.0


# -- pretraining ------------------------------------------------------------------------------


def test_pretraining_halves_masked_loss(small_dataset):
    m = small_model()
    st = pretrain(m, small_dataset, PretrainConfig(epochs=30, base_lr=1e-3, batch_size=8))
    losses = [h["loss"] for h in st.history]
    assert losses[-1] < 0.5 * losses[0]
    assert m.pretrain_epochs == 30


def test_pretraining_is_deterministic(small_dataset):
    runs = []
    for _ in range(2):
        m = small_model(seed=3)
        st = pretrain(m, small_dataset, PretrainConfig(epochs=3, base_lr=1e-3, batch_size=8, seed=3))
        runs.append(([h["loss"] for h in st.history], snapshot(m)))
    assert runs[0][0] == runs[1][0]
    for n in runs[0][1]:
        np.testing.assert_array_equal(runs[0][1][n], runs[1][1][n])


def test_pretraining_only_touches_extractor_backbone_decoder(small_dataset):
    m = small_model()
    before = snapshot(m)
    pretrain(m, small_dataset, PretrainConfig(epochs=1, base_lr=1e-3, batch_size=16))
    for name, p in m.named_parameters():
        changed = not np.array_equal(before[name], p.data)
        assert changed == (name.split(".")[0] in ("extractor", "t1", "decoder")), name


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_loss_aborts_with_step(small_dataset):
    m = small_model()
    m.extractor.proj.weight.data[...] = 3e38
    with pytest.raises(TrainingError, match="step 0"):
        pretrain(m, small_dataset, PretrainConfig(epochs=1))


# -- freezing ---------------------------------------------------------------------------------


@pytest.mark.parametrize("policy", ["none", "all", "last_layer"])
def test_freeze_policies_partition_parameters(policy):
    m = small_model(t1_layers=3)
    trainable, frozen = apply_freeze_policy(m, policy)
    names = [n for n, _ in m.named_parameters()]
    assert sorted(trainable + frozen) == sorted(names) and not set(trainable) & set(frozen)
    assert all(n.startswith("decoder") or n.startswith(("extractor", "t1")) for n in frozen)
    for part in ("t2", "cross", "head"):
        assert all(n in trainable for n in m.parts()[part])


def _finetune_steps(small_dataset, policy, epochs):
    m = small_model(t1_layers=2)
    pretrain(m, small_dataset, PretrainConfig(epochs=1, base_lr=1e-3, batch_size=16))
    before = snapshot(m)
    finetune(m, small_dataset, FinetuneConfig(epochs=epochs, base_lr=1e-3, batch_size=16, freeze=policy))
    return m, before


def test_freeze_all_keeps_backbone_bit_identical(small_dataset):
    m, before = _finetune_steps(small_dataset, "all", 3)  # 2 batches per epoch -> 6 steps
    for name in m.parts()["t1"] + m.parts()["extractor"] + m.parts()["decoder"]:
        np.testing.assert_array_equal(m.state_dict()[name].data, before[name])
    assert not np.array_equal(m.head.weight.data, before["head.weight"])


def test_freeze_none_updates_backbone(small_dataset):
    m, before = _finetune_steps(small_dataset, "none", 1)
    assert any(not np.array_equal(m.state_dict()[n].data, before[n]) for n in m.parts()["t1"])
    assert all(np.array_equal(m.state_dict()[n].data, before[n]) for n in m.parts()["decoder"])


def test_freeze_last_layer_per_layer_diff(small_dataset):
    m, before = _finetune_steps(small_dataset, "last-layer", 1)
    named = m.state_dict()
    assert all(np.array_equal(named[n].data, before[n]) for n in m.t1_layer_names(0) + m.parts()["extractor"])
    assert any(not np.array_equal(named[n].data, before[n]) for n in m.t1_layer_names(1))


# -- finetuning -------------------------------------------------------------------------------


def test_zeroed_classifier_starts_at_ln4(small_dataset):
    m = small_model()
    m.head.weight.data[...] = 0.0
    m.head.bias.data[...] = 0.0
    batch = pad_batch(small_dataset.clips[:8])
    loss = F.cross_entropy(m.logits(batch.x, batch.frame_valid), batch.labels).item()
    assert loss == pytest.approx(math.log(4), abs=1e-6)


def test_finetune_overfits_tiny_set(small_dataset):
    m = small_model()
    st = finetune(m, small_dataset, FinetuneConfig(epochs=200, base_lr=1e-3, batch_size=16, from_scratch=True))
    accs = [h["accuracy"] for h in st.history]
    assert max(accs) == 1.0
    assert evaluate(m, small_dataset).accuracy == 1.0


def test_finetune_is_deterministic_and_logs_cosine_lr(small_dataset):
    finals = []
    for _ in range(2):
        m = small_model(seed=2)
        st = finetune(m, small_dataset, FinetuneConfig(epochs=3, base_lr=1e-3, batch_size=16, from_scratch=True, seed=2))
        finals.append(snapshot(m))
    for n in finals[0]:
        np.testing.assert_array_equal(finals[0][n], finals[1][n])
    # two steps per epoch; the logged lr is the one used by the epoch's last step
    assert [h["lr"] for h in st.history] == [cosine_lr(s, 6, 1e-3) for s in (1, 3, 5)]


def test_finetune_requires_pretraining_or_flag(small_dataset):
    with pytest.raises(ConfigError, match="from_scratch"):
        finetune(small_model(), small_dataset, FinetuneConfig(epochs=1))


def test_finetune_rejects_out_of_range_labels(small_dataset):
    with pytest.raises(DatasetError, match="label"):
        finetune(small_model(n_classes=3), small_dataset, FinetuneConfig(epochs=1, from_scratch=True))


def test_metrics_log_writes_jsonl(tmp_path, small_dataset):
    log = MetricsLog(tmp_path / "m.jsonl")
    finetune(small_model(), small_dataset, FinetuneConfig(epochs=2, from_scratch=True), metrics=log, eval_dataset=small_dataset)
    rows = [json.loads(line) for line in (tmp_path / "m.jsonl").read_text().splitlines()]
    assert len(rows) == 4 and [r["split"] for r in rows] == ["train", "eval", "train", "eval"]
    assert set(rows[0]) == {"stage", "epoch", "split", "loss", "accuracy", "lr", "wall_ms"}


# -- evaluation -------------------------------------------------------------------------------


def constant_model(n_classes=4, winner=0):
    m = small_model(n_classes=n_classes)
    m.head.weight.data[...] = 0.0
    m.head.bias.data[...] = 0.0
    m.head.bias.data[winner] = 5.0
    return m


def test_constant_predictor_scores_chance(small_dataset):
    rep = evaluate(constant_model(), small_dataset)
    assert rep.accuracy == 0.25
    assert rep.per_class == [1.0, 0.0, 0.0, 0.0]


def test_confusion_rows_and_trace_identity(small_dataset):
    m = small_model(seed=9)
    rep = evaluate(m, small_dataset)
    conf = np.array(rep.confusion)
    assert conf.sum(axis=1).tolist() == small_dataset.class_counts()
    assert rep.accuracy == np.trace(conf) / conf.sum()


def test_group_accuracies_average_to_overall(small_dataset):
    m = small_model(seed=1)
    finetune(m, small_dataset, FinetuneConfig(epochs=5, base_lr=1e-3, from_scratch=True))
    rep = evaluate(m, small_dataset, class_groups={"a": [0, 1], "b": [2, 3]})
    weighted = sum(rep.groups[g] * rep.group_sizes[g] for g in rep.groups) / sum(rep.group_sizes.values())
    assert weighted == pytest.approx(rep.accuracy, abs=1e-12)
    with pytest.raises(ConfigError):
        evaluate(m, small_dataset, class_groups={"x": [7]})


def test_evaluation_deterministic_and_empty_set_rejected(small_dataset):
    m = small_model(seed=4)
    assert evaluate(m, small_dataset).to_dict() == evaluate(m, small_dataset).to_dict()
    with pytest.raises(DatasetError):
        evaluate(m, SkeletonDataset([], 5, 2, ["a"]))
