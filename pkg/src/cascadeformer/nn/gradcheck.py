"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor


class GradCheckError(AssertionError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[int, int] | None  # (parameter index, flat element index)
    n_checked: int
    passed: bool


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    rtol: float = 1e-4,
    eps: float = 1e-5,
    atol: float = 1e-8,
    max_elements: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f()`` with central differences.

    ``f`` must rebuild its graph from the current values of ``params`` on every
    call. Relative error per element is ``|a - n| / max(|a|, |n|, atol / rtol)``
    so that near-zero gradients are judged on an absolute scale. When
    ``max_elements`` is set, that many elements per parameter are sampled.
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters, got {p.dtype}")
        p.grad = None
    out = f()
    if out.data.size != 1:
        raise GradCheckError(f"grad_check needs a scalar output, got shape {out.shape}")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    floor = atol / rtol
    worst_err, worst_at, n_checked = 0.0, None, 0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_elements, replace=False)
        for i in idx:
            orig = flat[i]
            try:
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
            except NonFiniteError as exc:
                raise GradCheckError(f"non-finite values while perturbing parameter {pi}, element {i}: {exc}") from exc
            finally:
                flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GradCheckError(f"non-finite loss while perturbing parameter {pi}, element {i}")
            num = (up - down) / (2 * eps)
            a = analytic[pi].reshape(-1)[i]
            if not np.isfinite(a):
                raise GradCheckError(f"non-finite analytic gradient at parameter {pi}, element {i}")
            err = abs(a - num) / max(abs(a), abs(num), floor)
            n_checked += 1
            if err > worst_err:
                worst_err, worst_at = err, (pi, int(i))
    return GradCheckReport(worst_err, worst_at, n_checked, worst_err <= rtol)
