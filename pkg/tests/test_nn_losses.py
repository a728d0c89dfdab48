import numpy as np
import pytest

from vflab.errors import ConfigError, DimensionError
from vflab.nn import loss_value_and_grad, mae, mse


def fd_grad(fn, pred, h=1e-6):
    g = np.zeros_like(pred)
    flat = pred.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gf[i] = (up - down) / (2 * h)
    return g


def test_equal_inputs_give_zero():
    x = np.random.default_rng(0).normal(size=(3, 4))
    for fn in (mse, mae):
        value, grad = fn(x, x.copy())
        assert value == 0.0
        assert np.all(grad == 0)


def test_mse_hand_case():
    value, grad = mse(np.array([[2.0]]), np.array([[0.0]]))
    assert value == 4.0
    np.testing.assert_array_equal(grad, [[4.0]])


def test_mae_hand_case():
    value, grad = mae(np.array([[2.0]]), np.array([[0.0]]))
    assert value == 2.0
    np.testing.assert_array_equal(grad, [[1.0]])


def test_mae_subgradient_at_zero_is_zero():
    _, grad = mae(np.array([[1.0, 0.5]]), np.array([[1.0, 0.0]]))
    assert grad[0, 0] == 0.0
    assert grad[0, 1] == pytest.approx(0.5)


def test_values_are_means_over_all_entries():
    pred = np.array([[1.0, 2.0], [3.0, 4.0]])
    target = np.zeros((2, 2))
    value, _ = mse(pred, target)
    assert value == pytest.approx((1 + 4 + 9 + 16) / 4)
    value, _ = mae(pred, target)
    assert value == pytest.approx(10 / 4)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    pred = rng.normal(size=(3, 5))
    target = rng.normal(size=(3, 5))
    for kind in ("mse", "mae"):
        _, grad = loss_value_and_grad(kind, pred, target)
        fd = fd_grad(lambda: loss_value_and_grad(kind, pred, target)[0], pred)
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        mse(np.zeros((2, 2)), np.zeros((2, 3)))


def test_unknown_kind():
    with pytest.raises(ConfigError):
        loss_value_and_grad("huber", np.zeros((1, 1)), np.zeros((1, 1)))
