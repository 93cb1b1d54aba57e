"""AdamW / SGD updates and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .layers import ConfigError
from .tensor import Tensor

OPTIMIZERS = ("adamw", "sgd")


@dataclass
class OptimizerState:
    """Hyperparameters plus per-parameter moment buffers keyed by parameter name.

    AdamW keeps ``exp_avg`` and ``exp_avg_sq``; SGD keeps ``momentum`` only when
    ``momentum > 0``.
    """

    kind: str = "adamw"
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    momentum: float = 0.0
    step: int = 0
    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.kind!r}; expected one of {OPTIMIZERS}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        self.betas = tuple(float(b) for b in self.betas)

    def buffer_names(self) -> tuple[str, ...]:
        if self.kind == "adamw":
            return ("exp_avg", "exp_avg_sq")
        return ("momentum",) if self.momentum > 0 else ()

    def hyperparameters(self) -> dict:
        return {
            "kind": self.kind,
            "lr": self.lr,
            "betas": list(self.betas),
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "momentum": self.momentum,
        }


def optimizer_step(params: dict[str, Tensor], state: OptimizerState, lr_now: float) -> None:
    """Update every parameter in ``params`` that carries a gradient, in place.

    Parameters without a gradient (frozen or unused) are left untouched, and
    their buffers are not created.
    """
    if not lr_now > 0:
        raise ConfigError(f"learning rate must be positive, got {lr_now}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        bufs = state.buffers.setdefault(name, {})
        if state.kind == "adamw":
            b1, b2 = state.betas
            m = bufs.setdefault("exp_avg", np.zeros_like(p.data))
            v = bufs.setdefault("exp_avg_sq", np.zeros_like(p.data))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if state.weight_decay:
                p.data *= 1 - lr_now * state.weight_decay
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p.data -= lr_now * m_hat / (np.sqrt(v_hat) + state.eps)
        else:
            d = g + state.weight_decay * p.data if state.weight_decay else g
            if state.momentum > 0:
                buf = bufs.get("momentum")
                if buf is None:
                    buf = bufs["momentum"] = np.array(d, dtype=p.dtype, copy=True)
                else:
                    buf *= state.momentum
                    buf += d
                d = buf
            p.data -= lr_now * d


def cosine_lr(step: int, total_steps: int, base_lr: float, min_lr: float = 0.0) -> float:
    if total_steps <= 0:
        raise ConfigError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    return min_lr + 0.5 * (base_lr - min_lr) * (1 + math.cos(math.pi * step / total_steps))
