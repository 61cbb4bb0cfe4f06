import numpy as np
import pytest

from latentdiff.nnet import (
    EmaShadow,
    NonFiniteGradientError,
    OptimizerState,
    Parameter,
    adam_step,
    ema_update,
    make_rng,
)


def _params():
    return [Parameter("a", np.full((2, 3), 0.5)), Parameter("b", np.zeros(4))]


class TestAdam:
    def test_zero_gradients_leave_params_unchanged(self):
        params = _params()
        state = OptimizerState.for_params(params, learning_rate=0.1)
        before = [p.value.copy() for p in params]
        adam_step(state, params)
        for p, b in zip(params, before):
            np.testing.assert_array_equal(p.value, b)

    def test_first_step_with_unit_gradient_moves_by_lr(self):
        # Bias correction makes m_hat = v_hat = 1 on step one, so the update
        # is lr / (1 + eps) ~ lr.
        params = _params()
        state = OptimizerState.for_params(params, learning_rate=0.1)
        for p in params:
            p.grad[...] = 1.0
        before = [p.value.copy() for p in params]
        adam_step(state, params)
        for p, b in zip(params, before):
            np.testing.assert_allclose(b - p.value, 0.1, rtol=1e-6)

    def test_step_counter_increments_once_per_call(self):
        params = _params()
        state = OptimizerState.for_params(params)
        for expected in (1, 2, 3):
            adam_step(state, params)
            assert state.step == expected

    def test_non_finite_gradient_rejected_without_mutation(self):
        params = _params()
        state = OptimizerState.for_params(params)
        params[0].grad[...] = np.nan
        before = params[0].value.copy()
        with pytest.raises(NonFiniteGradientError, match="a"):
            adam_step(state, params)
        np.testing.assert_array_equal(params[0].value, before)
        assert state.step == 0

    def test_shape_mismatch_rejected(self):
        params = _params()
        state = OptimizerState.for_params(params)
        with pytest.raises(ValueError):
            adam_step(state, params, grads=[np.zeros((1, 1)), np.zeros(4)])


class TestEma:
    def test_decay_zero_tracks_params_exactly(self):
        params = _params()
        shadow = EmaShadow.from_params(params, decay=0.0)
        params[0].value[...] = 7.0
        ema_update(shadow, params)
        np.testing.assert_array_equal(shadow.shadow[0], params[0].value)

    def test_decay_one_freezes_shadow(self):
        params = _params()
        shadow = EmaShadow.from_params(params, decay=1.0)
        frozen = [s.copy() for s in shadow.shadow]
        params[0].value[...] = 7.0
        ema_update(shadow, params)
        for s, f in zip(shadow.shadow, frozen):
            np.testing.assert_array_equal(s, f)

    def test_standard_decay_arithmetic(self):
        p = [Parameter("a", np.zeros(3))]
        shadow = EmaShadow(decay=0.999, shadow=[np.ones(3)])
        ema_update(shadow, p)
        np.testing.assert_allclose(shadow.shadow[0], 0.999)

    def test_recurrence_holds_elementwise(self):
        rng = make_rng(0, "ema")
        params = [Parameter("a", rng.standard_normal((4, 4)))]
        shadow = EmaShadow.from_params(params, decay=0.9)
        for _ in range(5):
            prev = shadow.shadow[0].copy()
            params[0].value[...] = rng.standard_normal((4, 4))
            ema_update(shadow, params)
            np.testing.assert_allclose(
                shadow.shadow[0], 0.9 * prev + 0.1 * params[0].value, rtol=1e-12)

    def test_invalid_decay_rejected(self):
        with pytest.raises(ValueError):
            EmaShadow.from_params(_params(), decay=1.5)
