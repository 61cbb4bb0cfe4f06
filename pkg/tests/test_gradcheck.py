"""Finite-difference validation of every layer type used in the package."""

import numpy as np
import pytest

from latentdiff.data import Standardizer
from latentdiff.diffusion import DenoiserModel, DiffusionTrainConfig, build_schedule
from latentdiff.nnet import (
    Affine,
    GradientCheckError,
    LayerNorm,
    Relu,
    Sequential,
    gradient_check,
    make_rng,
    mlp,
    quadratic_loss,
    residual_block,
)


def test_linear_net_quadratic_loss_is_nearly_exact():
    net = Sequential([Affine(4, 3, make_rng(7, "i"))])
    x = make_rng(7, "x").standard_normal((5, 4))
    assert gradient_check(net, quadratic_loss, x) < 1e-8


def test_relu_mlp_within_tolerance():
    net = mlp([6, 16, 4], make_rng(1, "i"))
    x = make_rng(1, "x").standard_normal((4, 6))
    assert gradient_check(net, quadratic_loss, x) < 1e-4


def test_norm_residual_relu_stack_within_tolerance():
    rng = make_rng(2, "i")
    net = Sequential([
        Affine(6, 16, rng), Relu(),
        residual_block(16, 0.25, rng),
        LayerNorm(16), Affine(16, 4, rng),
    ])
    x = make_rng(2, "x").standard_normal((4, 6))
    assert gradient_check(net, quadratic_loss, x) < 1e-4


def test_denoiser_shaped_model_within_tolerance():
    config = DiffusionTrainConfig(hidden_width=32, blocks=2, dropout=0.2, timesteps=10)
    schedule = build_schedule("cosine", 10)
    model = DenoiserModel(6, schedule, Standardizer.identity(6), 0.0, 1.0,
                          config, make_rng(3, "init"))
    z = make_rng(4, "z").standard_normal((4, 6))
    y = make_rng(5, "y").random((4, 1))
    t = make_rng(6, "t").integers(1, 11, size=4)
    assert gradient_check(model, quadratic_loss, z, y, t) < 1e-4


def test_zero_step_size_rejected():
    net = Sequential([Affine(2, 2, make_rng(0, "i"))])
    with pytest.raises(ValueError, match="positive"):
        gradient_check(net, quadratic_loss, np.ones((1, 2)), h=0.0)


def test_tolerance_enforcement_raises():
    net = Sequential([Affine(2, 2, make_rng(0, "i"))])
    with pytest.raises(GradientCheckError):
        gradient_check(net, quadratic_loss, np.ones((1, 2)), tol=0.0)
