"""Adam with classic (coupled) L2 regularization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Tensor


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 0.0

    @classmethod
    def for_param(cls, param: Tensor, **hyper) -> "AdamState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data), **hyper)


def adam_step(param: Tensor, state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place.

    The L2 term ``l2 * param`` is added to the gradient before the moment
    updates.
    """
    if param.grad is None:
        raise ValueError(f"adam_step: parameter {param.name or param.shape} has no grad")
    if state.first_moment.shape != param.shape:
        raise ValueError(
            f"adam_step: state shape {state.first_moment.shape} != param shape {param.shape}"
        )
    g = param.grad
    if state.l2:
        g = g + state.l2 * param.data
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * g
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * (g * g)
    m_hat = state.first_moment / (1.0 - state.beta1**t)
    v_hat = state.second_moment / (1.0 - state.beta2**t)
    param.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class Adam:
    """Adam over a named parameter set; parameters without grad are skipped."""

    params: dict[str, Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 0.0
    states: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.states[name] = AdamState.for_param(
                p, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps, l2=self.l2
            )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                # unused this step (e.g. a disabled branch); L2 still applies
                p.grad = np.zeros_like(p.data)
            adam_step(p, self.states[name])
