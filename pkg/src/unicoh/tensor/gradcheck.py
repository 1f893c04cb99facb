"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Tensor, no_grad


class GradCheckError(ValueError):
    pass


def _scalar(loss: Tensor) -> float:
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = getattr(loss, "shape", type(loss).__name__)
        raise GradCheckError(f"loss_fn must return a scalar Tensor, got {shape}")
    value = float(loss.data.reshape(-1)[0])
    if not np.isfinite(value):
        raise GradCheckError(f"loss_fn returned a non-finite value: {value}")
    return value


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    eps: float = 1e-5,
    max_elements: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Compare analytic gradients against central differences.

    Returns the maximum of ``|analytic - numeric| / max(1, |analytic|)`` per
    parameter. With ``max_elements`` only that many randomly chosen entries of
    each parameter are probed.
    """
    if eps <= 0:
        raise GradCheckError("eps must be positive")
    if not isinstance(params, Mapping):
        params = {f"param{i}": p for i, p in enumerate(params)}

    for p in params.values():
        p.grad = None
    loss = loss_fn()
    _scalar(loss)
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    report: dict[str, float] = {}
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            indices = np.arange(flat.size)
            if max_elements is not None and flat.size > max_elements:
                rng = rng or np.random.default_rng(0)
                indices = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
            worst = 0.0
            a_flat = analytic[name].reshape(-1)
            for idx in indices:
                orig = flat[idx]
                flat[idx] = orig + eps
                up = _scalar(loss_fn())
                flat[idx] = orig - eps
                down = _scalar(loss_fn())
                flat[idx] = orig
                numeric = (up - down) / (2.0 * eps)
                a = float(a_flat[idx])
                err = abs(a - numeric) / max(1.0, abs(a))
                worst = max(worst, err)
            report[name] = worst
    return report
