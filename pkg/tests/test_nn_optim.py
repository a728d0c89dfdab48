import numpy as np
import pytest

from vflab.errors import DimensionError, TrainingError
from vflab.nn import AdamState, FlatAdam, adam_step

# one step at defaults with m_hat = v_hat = 1 after bias correction
ONE_STEP = -0.001 / (1.0 + 1e-8)


def hand_adam_trace(g_seq, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar reference trace computed straight from the update rule."""
    w, m, v = 0.0, 0.0, 0.0
    for t, g in enumerate(g_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        w -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return w


class TestAdamStep:
    def test_one_step_hand_value(self):
        w = [np.array([0.0])]
        state = AdamState.for_params(w)
        adam_step(w, [np.array([1.0])], state)
        assert state.t == 1
        assert abs(w[0][0] - ONE_STEP) < 1e-12
        assert abs(w[0][0] - (-0.000999999990)) < 1e-12

    def test_two_steps_match_hand_trace(self):
        w = [np.array([0.0])]
        state = AdamState.for_params(w)
        adam_step(w, [np.array([1.0])], state)
        adam_step(w, [np.array([1.0])], state)
        assert state.t == 2
        assert abs(w[0][0] - hand_adam_trace([1.0, 1.0])) < 1e-12

    def test_zero_grad_is_fixed_point(self):
        w = [np.array([1.5, -2.0]), np.array([[3.0]])]
        state = AdamState.for_params(w)
        for _ in range(5):
            adam_step(w, [np.zeros(2), np.zeros((1, 1))], state)
        np.testing.assert_array_equal(w[0], [1.5, -2.0])
        np.testing.assert_array_equal(w[1], [[3.0]])
        assert state.t == 5

    def test_t_strictly_increments(self):
        w = [np.zeros(3)]
        state = AdamState.for_params(w)
        for expect in (1, 2, 3):
            adam_step(w, [np.ones(3)], state)
            assert state.t == expect

    def test_nonfinite_grads_rejected(self):
        w = [np.zeros(2)]
        state = AdamState.for_params(w)
        with pytest.raises(TrainingError):
            adam_step(w, [np.array([1.0, np.inf])], state)

    def test_shape_mismatch(self):
        w = [np.zeros(2)]
        state = AdamState.for_params(w)
        with pytest.raises(DimensionError):
            adam_step(w, [np.zeros(3)], state)

    def test_defaults(self):
        state = AdamState.for_params([np.zeros(1)])
        assert (state.lr, state.beta1, state.beta2, state.eps) == (1e-3, 0.9, 0.999, 1e-8)


class TestFlatAdam:
    def test_one_step_hand_value_float64(self):
        flat = np.zeros(1, dtype=np.float64)
        opt = FlatAdam(flat)
        opt.step([np.array([1.0])])
        assert abs(flat[0] - ONE_STEP) < 1e-12

    def test_matches_adam_step_on_random_problem(self):
        rng = np.random.default_rng(0)
        shapes = [(3, 2), (3,), (1, 3)]
        init = [rng.normal(size=s) for s in shapes]

        ref = [p.copy() for p in init]
        state = AdamState.for_params(ref)
        flat = np.concatenate([p.ravel() for p in init])
        opt = FlatAdam(flat)
        for step in range(20):
            grads = [rng.normal(size=s) for s in shapes]
            adam_step(ref, [g.copy() for g in grads], state)
            opt.step([g.copy() for g in grads])
        got = np.concatenate([p.ravel() for p in ref])
        np.testing.assert_allclose(flat, got, rtol=1e-12, atol=1e-14)

    def test_zero_grads_fixed_point(self):
        flat = np.array([1.0, 2.0, 3.0])
        opt = FlatAdam(flat)
        for _ in range(4):
            opt.step([np.zeros(3)])
        np.testing.assert_array_equal(flat, [1.0, 2.0, 3.0])

    def test_grad_size_checked(self):
        opt = FlatAdam(np.zeros(4))
        with pytest.raises(DimensionError):
            opt.step([np.zeros(3)])
