import numpy as np
import pytest
from conftest import tiny_config, tiny_model

from cascadeformer.model import (
    CascadeFormer,
    MaskSpec,
    ModelConfig,
    full_reconstruction_loss,
    masked_reconstruction_loss,
    normalize_variant,
)
from cascadeformer.nn import ConfigError, ShapeError, Tensor, grad_check
from cascadeformer.nn import functional as F
from cascadeformer.training import apply_mask, make_batch_mask

VARIANTS = ["v1_0", "v1_1", "v1_2"]


def _x(seed, b, t, j, c, dtype=np.float32):
    return np.random.default_rng(seed).standard_normal((b, c, t, j)).astype(dtype)


def _silence_layer(layer):
    for p in (layer.attn.out_proj.weight, layer.attn.out_proj.bias, layer.ff2.weight, layer.ff2.bias):
        p.data[...] = 0.0


# -- config ---------------------------------------------------------------------------------


def test_variant_names_normalise():
    assert normalize_variant("1.2") == "v1_2" and normalize_variant("v1_0") == "v1_0"
    with pytest.raises(ConfigError):
        normalize_variant("2.0")


@pytest.mark.parametrize("embed,ok", [(208, True), (128, False), (104, True), (100, False)])
def test_v12_divisibility_against_joint_count(embed, ok):
    if ok:
        assert ModelConfig(variant="1.2", joints=13, embed_dim=embed, n_heads=4).joint_width == embed // 13
    else:
        with pytest.raises(ConfigError, match="divisible by the number of joints"):
            ModelConfig(variant="1.2", joints=13, embed_dim=embed, n_heads=4)


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        ModelConfig(embed_dim=10, n_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(decoder="conv")
    with pytest.raises(ConfigError):
        ModelConfig(variant="1.1", conv_kernel=4)
    with pytest.raises(ConfigError):
        ModelConfig(t1_layers=0)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"bogus": 1})


def test_parameter_count_matches_hand_formula():
    # per encoder layer: 2 norms (4d), 4 attention projections 4(d²+d), FFN d·4d+4d + 4d·d+d
    c, j, d, n = 2, 4, 8, 3
    layer = 4 * d + 4 * (d * d + d) + (4 * d * d + 4 * d) + (4 * d * d + d)
    expected = (c * j * d + d) + 2 * layer + (d * c * j + c * j) + 4 * (d * d + d) + (d * n + n)
    assert tiny_model("v1_0").num_parameters() == expected == 2203
    # the count depends on config only
    assert tiny_model("v1_1", seed=1).num_parameters() == tiny_model("v1_1", seed=2).num_parameters()


def test_init_is_deterministic_in_seed():
    a, b, c = tiny_model(seed=4), tiny_model(seed=4), tiny_model(seed=5)
    for (n1, p1), (n2, p2), (_, p3) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data, p2.data)
    assert not all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), c.parameters()))


def test_mask_spec_validation():
    with pytest.raises(ConfigError):
        MaskSpec("random", np.zeros((1, 2, 3)), 0.3)


# -- feature extraction -----------------------------------------------------------------------


def test_v10_feature_shape():
    m = CascadeFormer(ModelConfig(coord_dims=2, joints=3, embed_dim=8, n_heads=2), seed=0)
    assert m.extract_features(_x(0, 1, 2, 3, 2), np.ones((1, 2), bool)).shape == (1, 2, 8)


def test_v12_one_hot_probe_localises_joint_slices():
    m = CascadeFormer(ModelConfig(variant="1.2", coord_dims=2, joints=3, embed_dim=12, n_heads=2, positional_encoding="none"), seed=0)
    _silence_layer(m.extractor.spatial)
    base = m.extract_features(np.zeros((1, 2, 1, 3), np.float32), np.ones((1, 1), bool)).data[0, 0]
    for joint in range(3):
        x = np.zeros((1, 2, 1, 3), np.float32)
        x[0, 0, 0, joint] = 1.0
        changed = np.flatnonzero(m.extract_features(x, np.ones((1, 1), bool)).data[0, 0] != base)
        assert set(changed) <= set(range(4 * joint, 4 * joint + 4)) and len(changed) > 0


def test_v11_with_delta_kernel_equals_v10():
    cfg0 = tiny_config("v1_0")
    cfg1 = tiny_config("v1_1")
    m0, m1 = CascadeFormer(cfg0, seed=0), CascadeFormer(cfg1, seed=0)
    m1.extractor.conv.kernels.data[...] = 0.0
    for ch in range(2):
        m1.extractor.conv.kernels.data[ch, ch, 1] = 1.0
    m1.extractor.conv.bias.data[...] = 0.0
    m1.extractor.proj.weight.data[...] = m0.extractor.proj.weight.data
    m1.extractor.proj.bias.data[...] = m0.extractor.proj.bias.data
    x, valid = _x(1, 2, 5, 4, 2), np.ones((2, 5), bool)
    np.testing.assert_array_equal(m1.extract_features(x, valid).data, m0.extract_features(x, valid).data)


def test_input_shape_checked():
    with pytest.raises(ShapeError):
        tiny_model().logits(_x(0, 1, 3, 5, 2), np.ones((1, 3), bool))


# -- backbone ---------------------------------------------------------------------------------


@pytest.mark.parametrize("variant", VARIANTS)
def test_backbone_does_not_leak_from_padded_frames(variant):
    m = tiny_model(variant)
    x = _x(2, 2, 6, 4, 2)
    valid = np.array([[1, 1, 1, 1, 0, 0], [1, 1, 1, 1, 1, 1]], bool)
    out = m.backbone_forward(m.extract_features(x, valid), valid).data
    x2 = x.copy()
    x2[0, :, 4:, :] = 99.0
    out2 = m.backbone_forward(m.extract_features(x2, valid), valid).data
    np.testing.assert_array_equal(out2[0, :4], out[0, :4])
    np.testing.assert_array_equal(out2[1], out[1])


def test_backbone_shape_and_residual_path():
    m = CascadeFormer(ModelConfig(coord_dims=2, joints=4, embed_dim=16, n_heads=4, t1_layers=2), seed=0)
    x, valid = _x(3, 2, 5, 4, 2), np.ones((2, 5), bool)
    e = m.extract_features(x, valid)
    assert m.backbone_forward(e, valid).shape == (2, 5, 16)
    for layer in m.t1.layers:
        _silence_layer(layer)
    np.testing.assert_array_equal(m.backbone_forward(e, valid).data, e.data)


# -- decoders ---------------------------------------------------------------------------------


@pytest.mark.parametrize("decoder", ["linear", "mlp", "mlp_residual"])
def test_decoder_output_shape(decoder):
    m = tiny_model(decoder=decoder)
    e = Tensor(np.random.default_rng(0).standard_normal((1, 4, 8)).astype(np.float32))
    assert m.decode_reconstruction(e).shape == (1, 2, 4, 4)


def test_mlp_decoder_with_zero_hidden_layer_outputs_bias():
    m = tiny_model(decoder="mlp")
    m.decoder.hidden.weight.data[...] = 0.0
    m.decoder.hidden.bias.data[...] = 0.0
    m.decoder.out.bias.data[...] = np.arange(8, dtype=np.float32)
    e = Tensor(np.random.default_rng(0).standard_normal((2, 3, 8)).astype(np.float32))
    out = m.decoder(e).data
    np.testing.assert_array_equal(out, np.broadcast_to(np.arange(8, dtype=np.float32), out.shape))


def test_mlp_residual_decoder_algebra():
    m = tiny_model(decoder="mlp_residual", dtype=np.float64)
    d = m.decoder
    e = np.random.default_rng(1).standard_normal((1, 3, 8))
    w1, b1, w2, b2 = d.hidden.weight.data, d.hidden.bias.data, d.out.weight.data, d.out.bias.data
    expected = (e + np.maximum(e @ w1 + b1, 0.0)) @ w2 + b2
    np.testing.assert_allclose(d(Tensor(e)).data, expected, rtol=1e-12)
    # with the hidden layer silenced only the skip feeds the output layer
    d.hidden.weight.data[...] = 0.0
    np.testing.assert_allclose(d(Tensor(e)).data, e @ w2 + b2, rtol=1e-12)


# -- cascade head -----------------------------------------------------------------------------


def test_logits_shape():
    assert tiny_model().logits(_x(0, 3, 4, 4, 2), np.ones((3, 4), bool)).shape == (3, 3)


def test_single_frame_pooling_is_identity():
    x = Tensor(np.random.default_rng(0).standard_normal((1, 1, 5)))
    np.testing.assert_array_equal(F.masked_time_mean(x, np.ones((1, 1), bool)).data, x.data[:, 0])


@pytest.mark.parametrize("variant", VARIANTS)
def test_padding_never_changes_logits(variant):
    m = tiny_model(variant)
    x = _x(4, 1, 5, 4, 2)
    alone = m.logits(x, np.ones((1, 5), bool)).data
    for extra in (1, 3, 11):
        xp = np.concatenate([x, np.zeros((1, 2, extra, 4), np.float32)], axis=2)
        vp = np.arange(5 + extra)[None] < 5
        np.testing.assert_array_equal(m.logits(xp, vp).data, alone)
    # inside a batch next to a longer clip
    other = _x(5, 1, 9, 4, 2)
    batch = np.concatenate([np.concatenate([x, np.zeros((1, 2, 4, 4), np.float32)], axis=2), other])
    valid = np.array([[True] * 5 + [False] * 4, [True] * 9])
    np.testing.assert_array_equal(m.logits(batch, valid).data[:1], alone)


def test_cross_attention_roles_are_not_symmetric():
    m = tiny_model(dtype=np.float64)
    x, valid = _x(6, 1, 5, 4, 2, np.float64), np.ones((1, 5), bool)
    e_pre = m.backbone_forward(m.extract_features(x, valid), valid)
    e_fin = m.t2(e_pre, ~valid)
    right = m.cross(e_pre, e_fin, e_fin, ~valid).data
    swapped = m.cross(e_fin, e_pre, e_pre, ~valid).data
    assert not np.allclose(right, swapped)
    pooled = F.masked_time_mean(Tensor(right), valid)
    np.testing.assert_allclose(m.head(pooled).data, m.cascade_forward(e_pre, valid).data, rtol=1e-12)


# -- losses -----------------------------------------------------------------------------------


def test_masked_loss_zero_for_perfect_reconstruction():
    x = _x(7, 1, 3, 4, 2, np.float64)
    mask = np.zeros((1, 3, 4), bool)
    mask[0, 1, 2] = True
    assert masked_reconstruction_loss(x, Tensor(x.copy()), mask, np.ones((1, 3), bool)).item() == 0.0


def test_masked_loss_hand_value():
    x = np.zeros((1, 2, 1, 1))
    recon = Tensor(np.array([3.0, 4.0]).reshape(1, 2, 1, 1))
    loss = masked_reconstruction_loss(x, recon, np.ones((1, 1, 1), bool), np.ones((1, 1), bool))
    assert loss.item() == 12.5


def test_masked_loss_ignores_unmasked_positions_and_their_gradients():
    x = _x(8, 2, 4, 4, 2, np.float64)
    valid = np.ones((2, 4), bool)
    mask = np.random.default_rng(0).random((2, 4, 4)) < 0.3
    recon = Tensor(_x(9, 2, 4, 4, 2, np.float64), requires_grad=True)
    loss = masked_reconstruction_loss(x, recon, mask, valid)
    loss.backward()
    grad_mask = np.broadcast_to(mask[:, None], recon.shape)
    assert np.all(recon.grad[~grad_mask] == 0.0)
    perturbed = recon.data.copy()
    perturbed[~grad_mask] += 123.0
    assert masked_reconstruction_loss(x, Tensor(perturbed), mask, valid).item() == loss.item()


def test_masked_loss_with_nothing_masked_is_error():
    x = _x(10, 1, 2, 4, 2)
    with pytest.raises(ConfigError, match="zero masked"):
        masked_reconstruction_loss(x, Tensor(x), np.zeros((1, 2, 4), bool), np.ones((1, 2), bool))


def test_full_loss_hand_value_and_equivalence():
    x = np.zeros((1, 2, 1, 1))
    recon = Tensor(np.ones((1, 2, 1, 1)))
    assert full_reconstruction_loss(x, recon, np.ones((1, 1), bool)).item() == 1.0
    x, r = _x(11, 2, 3, 4, 2, np.float64), Tensor(_x(12, 2, 3, 4, 2, np.float64))
    valid = np.array([[1, 1, 0], [1, 1, 1]], bool)
    everything = np.ones((2, 3, 4), bool)
    assert full_reconstruction_loss(x, r, valid).item() == pytest.approx(masked_reconstruction_loss(x, r, everything, valid).item(), rel=1e-14)
    assert full_reconstruction_loss(x, Tensor(x), valid).item() == 0.0


# -- end-to-end gradients (sampled here; exhaustive in the acceptance suite) ----------------------------


@pytest.mark.parametrize("variant", VARIANTS)
def test_model_losses_gradcheck_sampled(variant):
    m = tiny_model(variant, dtype=np.float64)
    x, valid = _x(13, 1, 3, 4, 2, np.float64), np.ones((1, 3), bool)
    mask = make_batch_mask("joint", 0.3, valid, 4, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    pre = grad_check(lambda: masked_reconstruction_loss(x, m.reconstruct(apply_mask(x, mask), valid), mask, valid), m.parameters(), max_elements=6, rng=rng)
    fin = grad_check(lambda: F.cross_entropy(m.logits(x, valid), np.array([1])), m.parameters(), max_elements=6, rng=rng)
    assert pre.passed, pre
    assert fin.passed, fin
