"""Finite-difference gradient oracle.

The analytic backward passes in this package are hand-written, so every
layer combination used anywhere gets validated against central
differences in double precision. The check is the independent side of
the dual route; it never calls ``backward``, only repeated forwards.
"""

from __future__ import annotations

import numpy as np

from .layers import EVAL, Context


class GradientCheckError(AssertionError):
    pass


def gradient_check(model, loss_fn, *inputs, h: float = 1e-5, tol: float | None = None) -> float:
    """Max over parameters of |analytic - central difference| / max(1, |analytic|).

    `model` exposes params()/zero_grad()/forward(*inputs, ctx)/backward(grad, cache);
    `loss_fn` maps the forward output to (scalar loss, d loss / d output).
    Runs in eval mode so dropout stays inactive. If `tol` is given, raises
    GradientCheckError when the reported error exceeds it.
    """
    if h <= 0:
        raise ValueError(f"step size h must be positive, got {h}")

    def eval_loss() -> float:
        y, _ = model.forward(*inputs, EVAL)
        loss, _ = loss_fn(y)
        return float(loss)

    model.zero_grad()
    y, cache = model.forward(*inputs, EVAL)
    _, grad_out = loss_fn(y)
    model.backward(grad_out, cache)
    analytic = [p.grad.copy() for p in model.params()]

    worst = 0.0
    for p, a in zip(model.params(), analytic):
        flat = p.value.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = eval_loss()
            flat[i] = orig - h
            down = eval_loss()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
            if err > worst:
                worst = err
    if tol is not None and worst > tol:
        raise GradientCheckError(f"max relative gradient error {worst:.3e} exceeds {tol:.1e}")
    return worst


def quadratic_loss(y: np.ndarray) -> tuple[float, np.ndarray]:
    """0.5 * sum(y^2); its exact output gradient is y itself."""
    return 0.5 * float(np.sum(y * y)), y
