import numpy as np
import pytest

from gradcheck import H, fd_grads, run_suite
from vflab.classifier import softmax_xent_grad
from vflab.nn import ACT_IDENTITY, ACT_SELU, backward, build_mlp, forward
from vflab.representation import composed_batch_loss

TOL = 1e-4


def test_random_small_nets_match_finite_differences():
    errs = run_suite(20)
    assert max(errs) < TOL, f"worst relative error {max(errs):.2e}"


def test_seed_variety_covers_identity_and_selu():
    # the sampled architectures must exercise both activations
    from gradcheck import random_net_and_batch

    acts = set()
    for seed in range(30):
        net, _, _ = random_net_and_batch(seed)
        acts.update(l.activation for l in net.layers)
    assert acts == {ACT_SELU, ACT_IDENTITY}


def test_softmax_xent_gradient_matches_fd():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(6, 4))
    y = rng.integers(0, 4, size=6)
    _, grad = softmax_xent_grad(logits.copy(), y)
    fd = np.zeros_like(logits)
    for i in range(logits.size):
        pert = logits.copy().ravel()
        pert[i] += 1e-6
        up = softmax_xent_grad(pert.reshape(logits.shape), y)[0]
        pert[i] -= 2e-6
        down = softmax_xent_grad(pert.reshape(logits.shape), y)[0]
        fd.ravel()[i] = (up - down) / 2e-6
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)


@pytest.mark.parametrize("distill_loss", ["mse", "mae"])
def test_composed_objective_gradients_match_fd(distill_loss):
    rng = np.random.default_rng(11)
    enc = build_mlp([3, 5, 4], rng=rng, dtype=np.float64)
    dec = build_mlp([4, 5, 3], [ACT_SELU, ACT_IDENTITY], rng=rng, dtype=np.float64)
    x = rng.normal(size=(4, 3))
    teacher = rng.normal(size=(4, 4))
    mask = np.array([True, False, True, True])
    lam = 0.7

    def value():
        loss, _ = composed_batch_loss(
            enc, dec, x, teacher, mask, lam, distill_loss, want_grads=False
        )
        return loss

    # keep the L1 term away from its kink so central differences are valid
    z = forward(enc, x)[-1]
    assert np.abs(z[mask] - teacher[mask]).min() > 5e-3

    _, grads = composed_batch_loss(enc, dec, x, teacher, mask, lam, distill_loss)
    h = 1e-4 if distill_loss == "mae" else 1e-3
    params = enc.params() + dec.params()
    worst = 0.0
    for p, a in zip(params, grads):
        flat = p.ravel()
        fd = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = value()
            flat[i] = orig - h
            down = value()
            flat[i] = orig
            fd[i] = (up - down) / (2 * h)
        denom = np.maximum(np.maximum(np.abs(a.ravel()), np.abs(fd)), 1e-2)
        worst = max(worst, float((np.abs(a.ravel() - fd) / denom).max()))
    assert worst < 5e-4, f"worst relative error {worst:.2e}"


def test_distill_gradient_only_flows_into_masked_rows():
    rng = np.random.default_rng(13)
    enc = build_mlp([2, 3], rng=rng, dtype=np.float64)
    dec = build_mlp([3, 2], [ACT_IDENTITY], rng=rng, dtype=np.float64)
    x = rng.normal(size=(3, 2))
    teacher = rng.normal(size=(3, 3))
    no_mask = np.zeros(3, dtype=bool)
    base_loss, base_grads = composed_batch_loss(enc, dec, x, teacher, no_mask, 0.9, "mse")
    plain_loss, plain_grads = composed_batch_loss(enc, dec, x)
    assert base_loss == plain_loss
    for a, b in zip(base_grads, plain_grads):
        np.testing.assert_array_equal(a, b)
