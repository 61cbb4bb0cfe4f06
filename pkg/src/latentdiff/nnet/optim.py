"""Adam and the exponential-moving-average shadow."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Parameter


class NonFiniteGradientError(ValueError):
    """Raised when an update would consume NaN/Inf gradients; no state is mutated."""


@dataclass
class OptimizerState:
    """Bias-corrected Adam accumulators, one slot per parameter."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[Parameter], learning_rate: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "OptimizerState":
        return cls(
            learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps,
            m=[np.zeros_like(p.value) for p in params],
            v=[np.zeros_like(p.value) for p in params],
        )


def adam_step(state: OptimizerState, params: list[Parameter],
              grads: list[np.ndarray] | None = None) -> None:
    """One in-place Adam update. Rejects non-finite gradients before touching state."""
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ValueError("optimizer state / parameter count mismatch")
    for p, g in zip(params, grads):
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {p.name}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {p.name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.eps)


@dataclass
class EmaShadow:
    """Exponentially averaged copy of parameter values."""

    decay: float
    shadow: list[np.ndarray]

    @classmethod
    def from_params(cls, params: list[Parameter], decay: float) -> "EmaShadow":
        if not 0.0 <= decay <= 1.0:
            raise ValueError(f"EMA decay must be in [0, 1], got {decay}")
        return cls(decay=decay, shadow=[p.value.copy() for p in params])


def ema_update(shadow: EmaShadow, params: list[Parameter]) -> None:
    """shadow <- decay * shadow + (1 - decay) * param, elementwise."""
    if len(shadow.shadow) != len(params):
        raise ValueError("EMA shadow / parameter count mismatch")
    g = shadow.decay
    for s, p in zip(shadow.shadow, params):
        if s.shape != p.value.shape:
            raise ValueError(f"shadow shape {s.shape} does not match {p.name}")
        s *= g
        s += (1.0 - g) * p.value
