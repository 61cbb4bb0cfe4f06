"""Minimal dense-network substrate: layers, backprop, Adam, EMA, seeded RNG."""

from .checkpoint import load_arrays, save_arrays
from .gradcheck import GradientCheckError, gradient_check, quadratic_loss
from .layers import (
    EVAL,
    Affine,
    ConfigurationError,
    Context,
    DenseNet,
    Dropout,
    LayerNorm,
    LayerSpec,
    Module,
    Parameter,
    Relu,
    Residual,
    Sequential,
    mlp,
    residual_block,
    sinusoidal_embed,
)
from .optim import EmaShadow, NonFiniteGradientError, OptimizerState, adam_step, ema_update
from .rng import RngKey, make_rng

__all__ = [
    "EVAL",
    "Affine",
    "ConfigurationError",
    "Context",
    "DenseNet",
    "Dropout",
    "EmaShadow",
    "GradientCheckError",
    "LayerNorm",
    "LayerSpec",
    "Module",
    "NonFiniteGradientError",
    "OptimizerState",
    "Parameter",
    "Relu",
    "Residual",
    "RngKey",
    "Sequential",
    "adam_step",
    "ema_update",
    "gradient_check",
    "load_arrays",
    "make_rng",
    "mlp",
    "quadratic_loss",
    "residual_block",
    "save_arrays",
    "sinusoidal_embed",
]
