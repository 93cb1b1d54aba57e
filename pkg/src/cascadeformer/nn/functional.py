"""Differentiable kernels used by the model.

Every forward pass here is written so that one output row never depends on
how many other rows, padded frames or masked keys are in the batch:

* dense products go through a stacked ``(1, d_in) @ (d_in, d_out)`` matmul,
  so every row is the same BLAS problem regardless of batch size;
* sums over keys or frames are sequential (``cumsum``/explicit loops), so
  trailing zeros are added exactly.

BLAS picks different kernels for different matrix shapes, which otherwise
breaks bitwise pad invariance. Backward passes do not need this property
and use plain matmuls.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor

_GELU_C = math.sqrt(2.0 / math.pi)


def rowwise_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` for 2-D ``x`` with a per-row result independent of ``len(x)``."""
    return np.matmul(x[:, None, :], w)[:, 0, :]


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    d_in, d_out = weight.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"linear: input shape {x.shape} does not match weight shape {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    w = weight.data
    y = rowwise_matmul(x2, w)
    if bias is not None:
        y = y + bias.data
    y = y.reshape(*lead, d_out)

    def backward(g):
        g2 = g.reshape(-1, d_out)
        gx = (g2 @ w.T).reshape(*lead, d_in) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(y, parents, backward, "linear")


def _sequential_sum(a: np.ndarray, axis: int) -> np.ndarray:
    # cumsum accumulates strictly left to right, unlike ndarray.sum
    return np.take(np.cumsum(a, axis=axis), -1, axis=axis)


def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.expand_dims(_sequential_sum(e, axis), axis)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {x.shape}")
    y = _softmax_np(x.data, axis)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return Tensor._from_op(y, (x,), backward, "softmax")


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm: affine params {gain.shape}/{shift.shape} do not match last extent of {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + shift.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gg = g * gain.data
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True) - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._from_op(y, (x, gain, shift), backward, "layer_norm")


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return Tensor._from_op(np.where(on, x.data, 0).astype(x.dtype), (x,), lambda g: (g * on,), "relu")


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    a = x.data
    inner = _GELU_C * (a + 0.044715 * (a * a * a))
    t = np.tanh(inner)
    y = 0.5 * a * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * a * a)
        return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * dinner),)

    return Tensor._from_op(y.astype(a.dtype), (x,), backward, "gelu")


def attention(q: Tensor, k: Tensor, v: Tensor, key_padding_mask: np.ndarray | None = None) -> Tensor:
    """softmax(q kᵀ / √d) v over the last two axes.

    ``q`` is ``[B, ..., T_q, d]`` and ``k``/``v`` are ``[B, ..., T_k, d]``.
    ``key_padding_mask`` is boolean ``[B, T_k]`` with True marking keys to
    ignore. A query whose keys are all masked outputs zeros.
    """
    if q.shape[:-2] != k.shape[:-2] or k.shape != v.shape or q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: incompatible shapes q={q.shape} k={k.shape} v={v.shape}")
    qd, kd, vd = q.data, k.data, v.data
    d = qd.shape[-1]
    t_k = kd.shape[-2]
    scale = 1.0 / math.sqrt(d)
    scores = np.einsum("...qd,...kd->...qk", qd, kd) * scale

    dead = None
    if key_padding_mask is not None:
        mask = np.asarray(key_padding_mask, dtype=bool)
        if mask.shape != (qd.shape[0], t_k):
            raise ShapeError(f"attention: key_padding_mask shape {mask.shape} != {(qd.shape[0], t_k)}")
        mask = mask.reshape(mask.shape[0], *([1] * (scores.ndim - 2)), t_k)
        scores = np.where(mask, -np.inf, scores)
        dead = mask.all(axis=-1, keepdims=True)
        scores = np.where(dead, 0.0, scores)

    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    p = e / _sequential_sum(e, -1)[..., None]
    if dead is not None:
        p = np.where(dead, 0.0, p)
    p = p.astype(qd.dtype)

    out = p[..., :, 0:1] * vd[..., None, 0, :]
    for j in range(1, t_k):
        out = out + p[..., :, j : j + 1] * vd[..., None, j, :]

    def backward(g):
        gp = g @ np.swapaxes(vd, -1, -2)
        gv = np.swapaxes(p, -1, -2) @ g
        gs = p * (gp - np.sum(gp * p, axis=-1, keepdims=True)) * scale
        return gs @ kd, np.swapaxes(gs, -1, -2) @ qd, gv

    return Tensor._from_op(out, (q, k, v), backward, "attention")


def conv1d_over_joints(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-length cross-correlation along the joint axis.

    ``x`` is ``[N, C_in, J]``, ``kernels`` is ``[C_out, C_in, k]`` with odd ``k``;
    zero padding of ``(k - 1) / 2`` on both sides keeps the output at length J.
    """
    n, c_in, j = x.shape
    c_out, c_in_w, ksize = kernels.shape
    if c_in_w != c_in:
        raise ShapeError(f"conv1d: input channels {c_in} != kernel channels {c_in_w}")
    if ksize % 2 == 0:
        raise ValueError(f"conv1d: kernel size must be odd for same-length output, got {ksize}")
    pad = (ksize - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    # cols[n, j, c, t] = xp[n, c, j + t]
    cols = np.stack([xp[:, :, t : t + j] for t in range(ksize)], axis=-1).transpose(0, 2, 1, 3)
    cols2 = cols.reshape(n * j, c_in * ksize)
    w2 = kernels.data.reshape(c_out, c_in * ksize)
    y = rowwise_matmul(cols2, w2.T)
    if bias is not None:
        y = y + bias.data
    y = y.reshape(n, j, c_out).transpose(0, 2, 1)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(n * j, c_out)
        gw = (g2.T @ cols2).reshape(c_out, c_in, ksize) if kernels.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(n, j, c_in, ksize).transpose(0, 2, 1, 3)
            gxp = np.zeros_like(xp)
            for t in range(ksize):
                gxp[:, :, t : t + j] += gcols[..., t]
            gx = gxp[:, :, pad : pad + j]
        return gx, gw, gb

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor._from_op(np.ascontiguousarray(y), parents, backward, "conv1d")


def masked_time_mean(x: Tensor, frame_valid: np.ndarray) -> Tensor:
    """Average ``x[B, T, d]`` over the frames flagged valid in ``frame_valid[B, T]``."""
    valid = np.asarray(frame_valid, dtype=bool)
    b, t, d = x.shape
    if valid.shape != (b, t):
        raise ShapeError(f"masked_time_mean: frame_valid shape {valid.shape} != {(b, t)}")
    counts = valid.sum(axis=1).astype(x.dtype)
    if np.any(counts == 0):
        raise ValueError("masked_time_mean: a sequence has no valid frames")
    w = valid[..., None].astype(x.dtype)
    y = _sequential_sum(x.data * w, axis=1) / counts[:, None]

    def backward(g):
        return (w * (g / counts[:, None])[:, None, :],)

    return Tensor._from_op(y, (x,), backward, "masked_time_mean")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    b, n_classes = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} != {(b,)}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ValueError(f"cross_entropy: labels must lie in [0, {n_classes})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    loss = np.asarray(np.mean(lse - z[np.arange(b), labels]), dtype=z.dtype)

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(b), labels] -= 1.0
        return (p * (g / b),)

    return Tensor._from_op(loss, (logits,), backward, "cross_entropy")


def masked_mse(pred: Tensor, target: np.ndarray, weight: np.ndarray, count: float) -> Tensor:
    """``sum(weight * (pred - target)²) / count`` with ``weight`` broadcast to ``pred``."""
    target = as_tensor(target, pred.dtype).data
    w = np.broadcast_to(np.asarray(weight, dtype=pred.dtype), pred.shape)
    diff = pred.data - target
    loss = np.asarray(np.sum(w * diff * diff) / count, dtype=pred.dtype)

    def backward(g):
        return (w * diff * (2.0 * g / count),)

    return Tensor._from_op(loss, (pred,), backward, "masked_mse")
