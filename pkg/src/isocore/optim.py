"""AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter
from .errors import DimensionError, NumericalError, UsageError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def lr_at(step: int, steps: int, lr_peak: float, lr_final: float, warmup_steps: int) -> float:
    """Linear ramp from 0 to ``lr_peak`` over ``warmup_steps``, then cosine to ``lr_final``."""
    if not 0 <= step < steps:
        raise UsageError(f"step {step} outside schedule range [0, {steps})")
    if step < warmup_steps:
        return lr_peak * step / warmup_steps
    progress = (step - warmup_steps) / (steps - warmup_steps)
    return lr_final + 0.5 * (lr_peak - lr_final) * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: list[Parameter]) -> "OptimizerState":
        return cls({p.name: np.zeros(p.shape) for p in params}, {p.name: np.zeros(p.shape) for p in params}, 0)


def optimizer_step(
    params: list[Parameter],
    state: OptimizerState,
    lr: float,
    weight_decay: float,
    decay_exempt: frozenset[str] = frozenset(),
    grads: dict[str, np.ndarray] | None = None,
) -> None:
    """One AdamW update in place.

    Gradients are read from ``p.grad`` unless given explicitly. Weight decay
    ``p <- p - lr * wd * p`` is applied before the adaptive step, except for
    parameters named in ``decay_exempt``. Missing gradients count as zero.
    """
    checked = {}
    for p in params:
        g = grads.get(p.name) if grads is not None else p.grad
        g = np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {p.name!r} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {p.name!r} at step {state.step + 1}")
        checked[p.name] = g

    state.step += 1
    t = state.step
    bc1 = 1.0 - BETA1**t
    bc2 = 1.0 - BETA2**t
    for p in params:
        g = checked[p.name]
        m = state.m.setdefault(p.name, np.zeros(p.shape))
        v = state.v.setdefault(p.name, np.zeros(p.shape))
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        value = p.data.copy()
        if weight_decay and p.name not in decay_exempt:
            value -= lr * weight_decay * value
        value -= lr * (m / bc1) / (np.sqrt(v / bc2) + EPS)
        p.assign(value)
