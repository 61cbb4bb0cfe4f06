import numpy as np
import pytest

from latentdiff.nnet import (
    EVAL,
    Affine,
    ConfigurationError,
    Context,
    DenseNet,
    Dropout,
    LayerNorm,
    LayerSpec,
    Relu,
    Sequential,
    make_rng,
    mlp,
    residual_block,
    sinusoidal_embed,
)


class TestSinusoidalEmbed:
    def test_t0_dim4_is_zero_one_pattern(self):
        np.testing.assert_array_equal(sinusoidal_embed(0, 4), [0.0, 1.0, 0.0, 1.0])

    def test_pure_function(self):
        a = sinusoidal_embed(7, 64)
        b = sinusoidal_embed(7, 64)
        np.testing.assert_array_equal(a, b)

    def test_components_bounded(self):
        v = sinusoidal_embed(7, 64)
        assert np.all(v >= -1.0) and np.all(v <= 1.0)

    def test_odd_dim_rejected(self):
        with pytest.raises(ConfigurationError):
            sinusoidal_embed(3, 5)

    def test_negative_t_rejected(self):
        with pytest.raises(ConfigurationError):
            sinusoidal_embed(-1, 4)

    def test_vectorized_matches_scalar(self):
        batch = sinusoidal_embed(np.array([0, 3, 9]), 8)
        for i, t in enumerate([0, 3, 9]):
            np.testing.assert_array_equal(batch[i], sinusoidal_embed(t, 8))


class TestForward:
    def test_identity_affine_passes_through(self):
        layer = Affine(3, 3)
        layer.w.value[...] = np.eye(3)
        x = make_rng(0, "x").standard_normal((6, 3))
        y, _ = layer.forward(x, EVAL)
        np.testing.assert_array_equal(y, x)

    def test_eval_mode_deterministic(self):
        net = Sequential([Affine(4, 8, make_rng(1, "i")), Relu(),
                          LayerNorm(8), Dropout(0.5), Affine(8, 2, make_rng(2, "i"))])
        x = make_rng(3, "x").standard_normal((5, 4))
        y1, _ = net.forward(x, EVAL)
        y2, _ = net.forward(x, EVAL)
        np.testing.assert_array_equal(y1, y2)

    def test_relu_clips_negative(self):
        net = Sequential([Affine(2, 2), Relu()])
        net.modules[0].w.value[...] = np.eye(2)
        y, _ = net.forward(np.array([[-1.0, 2.0]]), EVAL)
        np.testing.assert_array_equal(y, [[0.0, 2.0]])

    def test_dimension_mismatch_rejected(self):
        layer = Affine(3, 2)
        with pytest.raises(ConfigurationError):
            layer.forward(np.zeros((4, 5)), EVAL)

    def test_non_finite_input_rejected(self):
        net = DenseNet([LayerSpec(2, 2)], make_rng(0, "i"))
        with pytest.raises(ValueError, match="non-finite"):
            net.forward(np.array([[1.0, np.nan]]), EVAL)

    def test_dense_net_dims_must_chain(self):
        with pytest.raises(ConfigurationError, match="chain"):
            DenseNet([LayerSpec(2, 3), LayerSpec(4, 2)], make_rng(0, "i"))


class TestBackward:
    def test_single_affine_bias_gradient_is_output(self):
        layer = Affine(3, 3)
        layer.w.value[...] = make_rng(0, "w").standard_normal((3, 3))
        x = make_rng(1, "x").standard_normal((1, 3))
        y, cache = layer.forward(x, EVAL)
        layer.backward(y, cache)  # loss = 0.5 ||y||^2 so grad_out = y
        np.testing.assert_allclose(layer.b.grad, y[0])

    def test_zero_grad_out_gives_zero_gradients(self):
        net = mlp([4, 8, 2], make_rng(2, "i"))
        x = make_rng(3, "x").standard_normal((5, 4))
        y, cache = net.forward(x, EVAL)
        net.backward(np.zeros_like(y), cache)
        for p in net.params():
            np.testing.assert_array_equal(p.grad, np.zeros_like(p.grad))

    def test_dropout_train_scaling_preserves_mean(self):
        drop = Dropout(0.4)
        x = np.ones((200, 50))
        y, _ = drop.forward(x, Context(train=True, rng=make_rng(0, "d")))
        # Inverted scaling keeps the expectation at 1.
        assert abs(y.mean() - 1.0) < 0.05
        kept = y[y > 0]
        np.testing.assert_allclose(kept, 1.0 / 0.6)

    def test_residual_adds_input(self):
        block = residual_block(4, 0.0, make_rng(5, "i"))
        for p in block.params():
            p.value[...] = 0.0
        # Zero weights in the branch make the block behave as pure identity.
        x = make_rng(6, "x").standard_normal((3, 4))
        y, _ = block.forward(x, EVAL)
        np.testing.assert_array_equal(y, x)


class TestLayerNorm:
    def test_normalizes_rows(self):
        ln = LayerNorm(6)
        x = make_rng(7, "x").standard_normal((4, 6)) * 5 + 3
        y, _ = ln.forward(x, EVAL)
        np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.std(axis=1), 1.0, atol=1e-3)

    def test_gain_bias_applied(self):
        ln = LayerNorm(2)
        ln.gain.value[...] = [2.0, 2.0]
        ln.bias.value[...] = [1.0, 1.0]
        y, _ = ln.forward(np.array([[1.0, -1.0]]), EVAL)
        np.testing.assert_allclose(y, [[3.0, -1.0]], atol=1e-4)
