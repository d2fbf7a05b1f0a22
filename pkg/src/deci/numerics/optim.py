from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    """Moment accumulators for a fixed list of parameters."""

    step_size: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_init(params: list[Tensor], step_size: float = 0.01) -> AdamState:
    return AdamState(
        step_size=step_size,
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(state: AdamState, grads: list[np.ndarray | None], params: list[Tensor]) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place.

    A ``None`` gradient is treated as zero.
    """
    if len(grads) != len(params) or len(params) != len(state.m):
        raise ValueError("Adam state, gradients and parameters differ in length")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape or state.m[i].shape != p.data.shape:
            raise ValueError(f"shape mismatch for parameter {i}: {g.shape} vs {p.data.shape}")
        m = state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        v = state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        p.data = p.data - state.step_size * (m / c1) / (np.sqrt(v / c2) + state.eps)
