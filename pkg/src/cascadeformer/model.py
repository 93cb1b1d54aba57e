"""CascadeFormer: feature extraction, temporal backbone (T1), reconstruction
decoder, task transformer (T2), cross-attention fusion and classifier.

Tensors follow the skeleton layout ``x[B, C, T, J]``; frame embeddings are
``[B, T, embed_dim]``. ``frame_valid[B, T]`` marks real (unpadded) frames.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .nn import functional as F
from .nn.layers import ConfigError, Conv1d, Encoder, EncoderLayer, Linear, Module, MultiHeadAttention
from .nn.rng import INIT, make_rng
from .nn.tensor import ShapeError, Tensor

VARIANTS = ("v1_0", "v1_1", "v1_2")
DECODERS = ("linear", "mlp", "mlp_residual")
POSITIONAL = ("sinusoidal", "none")
MASK_MODES = ("joint", "frame", "none")

# parameter-name prefixes of the model's parts, in canonical order
PARTS = ("extractor", "t1", "decoder", "t2", "cross", "head")


def normalize_variant(name: str) -> str:
    v = str(name).strip().lower().replace(".", "_")
    if not v.startswith("v"):
        v = "v" + v
    if v not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of 1.0, 1.1, 1.2")
    return v


@dataclass
class ModelConfig:
    variant: str = "v1_0"
    coord_dims: int = 2
    joints: int = 13
    embed_dim: int = 104
    t1_layers: int = 4
    t2_layers: int = 2
    n_heads: int = 4
    n_classes: int = 2
    decoder: str = "linear"
    conv_kernel: int = 3
    st_heads: int = 1
    positional_encoding: str = "sinusoidal"

    def __post_init__(self) -> None:
        self.variant = normalize_variant(self.variant)
        self.validate()

    def validate(self) -> None:
        for name in ("coord_dims", "joints", "embed_dim", "t1_layers", "t2_layers", "n_heads", "n_classes", "st_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.decoder not in DECODERS:
            raise ConfigError(f"unknown decoder {self.decoder!r}; expected one of {DECODERS}")
        if self.positional_encoding not in POSITIONAL:
            raise ConfigError(f"unknown positional_encoding {self.positional_encoding!r}")
        if self.embed_dim % self.n_heads:
            raise ConfigError(f"embed_dim={self.embed_dim} is not divisible by n_heads={self.n_heads}")
        if self.variant == "v1_1" and (self.conv_kernel < 1 or self.conv_kernel % 2 == 0):
            raise ConfigError(f"conv_kernel must be a positive odd number, got {self.conv_kernel}")
        if self.variant == "v1_2":
            if self.embed_dim % self.joints:
                raise ConfigError(
                    f"variant 1.2 needs embed_dim divisible by the number of joints J: "
                    f"embed_dim={self.embed_dim}, J={self.joints}"
                )
            if (self.embed_dim // self.joints) % self.st_heads:
                raise ConfigError(f"per-joint width {self.embed_dim // self.joints} is not divisible by st_heads={self.st_heads}")

    @property
    def joint_width(self) -> int:
        return self.embed_dim // self.joints

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class MaskSpec:
    mode: str
    masked: np.ndarray  # bool [B, T, J]
    ratio: float

    def __post_init__(self) -> None:
        if self.mode not in MASK_MODES:
            raise ConfigError(f"unknown mask mode {self.mode!r}; expected one of {MASK_MODES}")
        self.masked = np.asarray(self.masked, dtype=bool)

    @property
    def count(self) -> int:
        return int(self.masked.sum())


def sinusoidal_positions(t: int, d: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(t, dtype=np.float64)[:, None]
    i = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((t, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe.astype(dtype)


class FeatureExtractor(Module):
    """Frame tokens from skeleton frames; one of the three variants."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype) -> None:
        super().__init__()
        self.cfg = cfg
        c, j, d = cfg.coord_dims, cfg.joints, cfg.embed_dim
        if cfg.variant == "v1_1":
            self.conv = Conv1d(c, c, cfg.conv_kernel, rng, dtype)
        if cfg.variant == "v1_2":
            self.joint_proj = Linear(c, cfg.joint_width, rng, dtype)
            self.spatial = EncoderLayer(cfg.joint_width, cfg.st_heads, rng, dtype)
        else:
            self.proj = Linear(c * j, d, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        b, c, t, j = x.shape
        if self.cfg.variant == "v1_2":
            tokens = x.transpose(0, 2, 3, 1).reshape(b * t, j, c)
            tokens = self.spatial(self.joint_proj(tokens))
            return tokens.reshape(b, t, j * self.cfg.joint_width)
        frames = x.transpose(0, 2, 1, 3)  # [B, T, C, J]
        if self.cfg.variant == "v1_1":
            frames = self.conv(frames.reshape(b * t, c, j))
        return self.proj(frames.reshape(b, t, c * j))


class Decoder(Module):
    """Maps frame embeddings back to C·J coordinates per frame.

    ``mlp_residual`` adds the identity around the hidden layer:
    ``out = W2 (e + relu(W1 e + b1)) + b2``.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype) -> None:
        super().__init__()
        self.kind = cfg.decoder
        d, out = cfg.embed_dim, cfg.coord_dims * cfg.joints
        if self.kind != "linear":
            self.hidden = Linear(d, d, rng, dtype)
        self.out = Linear(d, out, rng, dtype)

    def forward(self, e: Tensor) -> Tensor:
        if self.kind == "mlp":
            e = F.relu(self.hidden(e))
        elif self.kind == "mlp_residual":
            e = e + F.relu(self.hidden(e))
        return self.out(e)


class CascadeFormer(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> None:
        super().__init__()
        cfg.validate()
        self.config = cfg
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.pretrain_epochs = 0
        self.meta: dict = {}  # JSON-serialisable extras stored with checkpoints
        rng = make_rng(seed, INIT)
        d = cfg.embed_dim
        self.extractor = FeatureExtractor(cfg, rng, dtype)
        self.t1 = Encoder(cfg.t1_layers, d, cfg.n_heads, rng, dtype)
        self.decoder = Decoder(cfg, rng, dtype)
        self.t2 = Encoder(cfg.t2_layers, d, cfg.n_heads, rng, dtype)
        self.cross = MultiHeadAttention(d, cfg.n_heads, rng, dtype)
        self.head = Linear(d, cfg.n_classes, rng, dtype)

    # -- pieces -----------------------------------------------------------------

    def _check_input(self, x: np.ndarray, frame_valid: np.ndarray) -> None:
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.coord_dims or x.shape[3] != cfg.joints:
            raise ShapeError(f"expected x of shape [B, {cfg.coord_dims}, T, {cfg.joints}], got {x.shape}")
        if frame_valid.shape != (x.shape[0], x.shape[2]):
            raise ShapeError(f"frame_valid shape {frame_valid.shape} != {(x.shape[0], x.shape[2])}")

    def extract_features(self, x, frame_valid: np.ndarray) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        self._check_input(x.data, np.asarray(frame_valid))
        e = self.extractor(x)
        if self.config.positional_encoding == "sinusoidal":
            e = e + sinusoidal_positions(x.shape[2], self.config.embed_dim, self.dtype)
        return e

    def backbone_forward(self, e: Tensor, frame_valid: np.ndarray) -> Tensor:
        return self.t1(e, ~np.asarray(frame_valid, dtype=bool))

    def decode_reconstruction(self, e_pretrain: Tensor) -> Tensor:
        b, t, _ = e_pretrain.shape
        cfg = self.config
        flat = self.decoder(e_pretrain)
        return flat.reshape(b, t, cfg.coord_dims, cfg.joints).transpose(0, 2, 1, 3)

    def cascade_forward(self, e_pretrain: Tensor, frame_valid: np.ndarray) -> Tensor:
        pad = ~np.asarray(frame_valid, dtype=bool)
        e_finetune = self.t2(e_pretrain, pad)
        e_cross = self.cross(e_pretrain, e_finetune, e_finetune, pad)
        return self.head(F.masked_time_mean(e_cross, frame_valid))

    # -- full paths -----------------------------------------------------------------

    def reconstruct(self, x, frame_valid: np.ndarray) -> Tensor:
        return self.decode_reconstruction(self.backbone_forward(self.extract_features(x, frame_valid), frame_valid))

    def logits(self, x, frame_valid: np.ndarray) -> Tensor:
        return self.cascade_forward(self.backbone_forward(self.extract_features(x, frame_valid), frame_valid), frame_valid)

    # -- parameter bookkeeping -------------------------------------------------------

    def state_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def parts(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {p: [] for p in PARTS}
        for name, _ in self.named_parameters():
            out[name.split(".", 1)[0]].append(name)
        return out

    def t1_layer_names(self, layer: int) -> list[str]:
        prefix = f"t1.layers.{layer}."
        return [n for n, _ in self.named_parameters() if n.startswith(prefix)]


def masked_reconstruction_loss(x: np.ndarray, recon: Tensor, mask: MaskSpec | np.ndarray, frame_valid: np.ndarray) -> Tensor:
    """Mean squared error over masked, valid ``(b, t, j)`` positions and all C channels."""
    masked = mask.masked if isinstance(mask, MaskSpec) else np.asarray(mask, dtype=bool)
    valid = np.asarray(frame_valid, dtype=bool)
    if masked.shape != (x.shape[0], x.shape[2], x.shape[3]):
        raise ShapeError(f"mask shape {masked.shape} does not match x {x.shape}")
    if recon.shape != x.shape:
        raise ShapeError(f"reconstruction shape {recon.shape} != input shape {x.shape}")
    sel = masked & valid[:, :, None]
    n = int(sel.sum())
    if n == 0:
        raise ConfigError("masked reconstruction loss over zero masked positions; use the full reconstruction loss")
    return F.masked_mse(recon, x, sel[:, None, :, :], n * x.shape[1])


def full_reconstruction_loss(x: np.ndarray, recon: Tensor, frame_valid: np.ndarray) -> Tensor:
    """Mean squared error over every coordinate of every valid frame."""
    valid = np.asarray(frame_valid, dtype=bool)
    if recon.shape != x.shape:
        raise ShapeError(f"reconstruction shape {recon.shape} != input shape {x.shape}")
    n = int(valid.sum()) * x.shape[1] * x.shape[3]
    return F.masked_mse(recon, x, valid[:, None, :, None], n)
