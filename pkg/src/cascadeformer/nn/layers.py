"""Parameterised building blocks.

Parameters are registered in attribute-assignment order, which fixes the
canonical parameter order used for initialisation and checkpoints.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import ShapeError, Tensor


class ConfigError(ValueError):
    pass


class Module:
    def __init__(self) -> None:
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules) -> None:
        super().__init__()
        self._items = []
        for i, m in enumerate(modules):
            setattr(self, str(i), m)
            self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def uniform_param(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def const_param(shape, value: float, dtype) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32, bias: bool = True) -> None:
        super().__init__()
        self.weight = uniform_param(rng, (d_in, d_out), d_in, dtype)
        self.bias = const_param((d_out,), 0.0, dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32, eps: float = 1e-5) -> None:
        super().__init__()
        self.gain = const_param((d,), 1.0, dtype)
        self.shift = const_param((d,), 0.0, dtype)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gain, self.shift, self.eps)


class Conv1d(Module):
    """Same-length 1-D convolution over the last axis of ``[N, C, J]``."""

    def __init__(self, c_in: int, c_out: int, kernel_size: int, rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__()
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ConfigError(f"conv kernel size must be a positive odd number, got {kernel_size}")
        self.kernels = uniform_param(rng, (c_out, c_in, kernel_size), c_in * kernel_size, dtype)
        self.bias = const_param((c_out,), 0.0, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv1d_over_joints(x, self.kernels, self.bias)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__()
        if n_heads < 1 or d_model % n_heads:
            raise ConfigError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.q_proj = Linear(d_model, d_model, rng, dtype)
        self.k_proj = Linear(d_model, d_model, rng, dtype)
        self.v_proj = Linear(d_model, d_model, rng, dtype)
        self.out_proj = Linear(d_model, d_model, rng, dtype)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.reshape(b, t, self.n_heads, self.d_model // self.n_heads).transpose(0, 2, 1, 3)

    def forward(self, q: Tensor, k: Tensor, v: Tensor, key_padding_mask: np.ndarray | None = None) -> Tensor:
        if q.shape[-1] != self.d_model or k.shape[-1] != self.d_model or v.shape[-1] != self.d_model:
            raise ShapeError(f"multi-head attention expects width {self.d_model}, got {q.shape}, {k.shape}, {v.shape}")
        b, t_q, _ = q.shape
        heads = F.attention(
            self._split(self.q_proj(q)),
            self._split(self.k_proj(k)),
            self._split(self.v_proj(v)),
            key_padding_mask,
        )
        merged = heads.transpose(0, 2, 1, 3).reshape(b, t_q, self.d_model)
        return self.out_proj(merged)


class EncoderLayer(Module):
    """Pre-norm transformer encoder layer with a GELU feed-forward block of width 4·d."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__()
        self.norm1 = LayerNorm(d_model, dtype)
        self.attn = MultiHeadAttention(d_model, n_heads, rng, dtype)
        self.norm2 = LayerNorm(d_model, dtype)
        self.ff1 = Linear(d_model, 4 * d_model, rng, dtype)
        self.ff2 = Linear(4 * d_model, d_model, rng, dtype)

    def forward(self, x: Tensor, key_padding_mask: np.ndarray | None = None) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, key_padding_mask)
        return x + self.ff2(F.gelu(self.ff1(self.norm2(x))))


class Encoder(Module):
    def __init__(self, n_layers: int, d_model: int, n_heads: int, rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__()
        if n_layers < 1:
            raise ConfigError(f"encoder needs at least one layer, got {n_layers}")
        self.layers = ModuleList(EncoderLayer(d_model, n_heads, rng, dtype) for _ in range(n_layers))

    def forward(self, x: Tensor, key_padding_mask: np.ndarray | None = None) -> Tensor:
        for layer in self.layers:
            x = layer(x, key_padding_mask)
        return x
