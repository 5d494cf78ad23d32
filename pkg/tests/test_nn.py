import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from olgan.autodiff import Tape
from olgan.nn import (
    AdamState,
    FnnParams,
    adam_step,
    fnn_forward,
    input_gradient,
    kaiming_uniform_init,
    param_gradients,
    penalty_parameter_gradient,
)

from conftest import central_fd, rel_err


def test_kaiming_bound_and_zero_bias():
    rng = np.random.default_rng(0)
    w = kaiming_uniform_init((400, 50), 0.01, rng)
    bound = math.sqrt(2.0 / (1 + 0.01**2)) * math.sqrt(3.0 / 50)
    assert np.abs(w).max() <= bound
    assert np.abs(w).max() > 0.95 * bound
    # uniform on [-b, b] has variance b^2 / 3
    assert abs(w.var() - bound**2 / 3) < 0.05 * bound**2 / 3
    net = FnnParams.init([50, 400, 1], rng)
    assert all(np.all(b == 0) for b in net.biases)


def test_invalid_networks_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        FnnParams.init([2, 3], rng, slope=1.5)
    with pytest.raises(ValueError):
        FnnParams.init([2, 3], rng, activation="relu6")
    with pytest.raises(ValueError):
        FnnParams([np.ones((3, 2)), np.ones((1, 4))], [np.zeros(3), np.zeros(1)])
    net = FnnParams.init([2, 3], rng)
    with pytest.raises(ValueError):
        fnn_forward(net, np.ones((4, 5)))


@settings(max_examples=25, deadline=None)
@given(
    sizes=st.lists(st.integers(1, 8), min_size=2, max_size=5),
    act=st.sampled_from(["leaky_relu", "tanh"]),
    seed=st.integers(0, 10_000),
)
def test_taped_forward_equals_numpy_forward(sizes, act, seed):
    rng = np.random.default_rng(seed)
    net = FnnParams.init(sizes, rng, act)
    x = rng.standard_normal((3, sizes[0]))
    tape = Tape()
    np.testing.assert_allclose(fnn_forward(net, x, tape).value, fnn_forward(net, x), rtol=0, atol=1e-14)


@pytest.mark.parametrize("act", ["leaky_relu", "tanh"])
def test_parameter_and_input_gradients(act):
    rng = np.random.default_rng(3)
    net = FnnParams.init([4, 16, 16, 1], rng, act)
    x = rng.standard_normal((5, 4))
    tape = Tape()
    grads = param_gradients(tape, tape.sum(fnn_forward(net, x, tape)), net)
    for a, g in zip(net.arrays(), grads):
        fd = central_fd(lambda: float(fnn_forward(net, x).sum()), a)
        assert rel_err(g, fd) < 1e-6
    x0 = x[0].copy()
    fd = central_fd(lambda: float(fnn_forward(net, x0[None])[0, 0]), x0)
    assert rel_err(input_gradient(net, x0), fd) < 1e-6


def test_penalty_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    net = FnnParams.init([3, 8, 8, 1], rng, "tanh")
    x = rng.standard_normal((6, 3))
    value, grads = penalty_parameter_gradient(net, x, 10.0)

    def pen():
        norms = np.array([np.linalg.norm(input_gradient(net, row)) for row in x])
        return 10.0 * np.mean((norms - 1.0) ** 2)

    assert value == pytest.approx(pen(), rel=1e-12)
    for a, g in zip(net.arrays(), grads):
        assert rel_err(g, central_fd(pen, a)) < 1e-5


def adam_oracle(p, grads, lr, b1, b2, eps):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        p = p - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return p


@pytest.mark.parametrize("b1", [0.0, 0.9])
def test_adam_matches_reference_recursion(b1):
    rng = np.random.default_rng(5)
    p0 = rng.standard_normal(4)
    gs = [rng.standard_normal(4) for _ in range(5)]
    p = p0.copy()
    state = AdamState(lr=1e-2, beta1=b1)
    for g in gs:
        adam_step(state, [p], [g])
    np.testing.assert_allclose(p, adam_oracle(p0, gs, 1e-2, b1, 0.999, 1e-8), rtol=0, atol=1e-15)
    assert state.step == 5


def test_adam_first_step_moves_by_lr():
    p = np.array([1.0, -2.0])
    adam_step(AdamState(lr=0.1), [p], [np.array([3.0, -0.5])])
    np.testing.assert_allclose(p, [0.9, -1.9], atol=1e-7)


def test_adam_rejects_nan_gradient():
    p = np.zeros(2)
    with pytest.raises(FloatingPointError):
        adam_step(AdamState(), [p], [np.array([np.nan, 0.0])])
    np.testing.assert_array_equal(p, 0.0)


def test_adam_minimizes_quadratic():
    p = np.array([3.0, -4.0])
    state = AdamState(lr=0.05, beta1=0.9)
    for _ in range(2000):
        adam_step(state, [p], [2 * p])
    assert np.linalg.norm(p) < 1e-2


def test_kaiming_bound_for_relu_fan_in_six():
    rng = np.random.default_rng(0)
    w = kaiming_uniform_init((100_000, 6), 0.0, rng)
    # gain sqrt(2) times sqrt(3/6) is exactly 1
    assert np.abs(w).max() <= 1.0
    assert abs(w.mean()) < 0.02


def test_hand_evaluated_forward_passes():
    eye = FnnParams([np.eye(3)], [np.zeros(3)], activation="identity")
    x = np.array([[1.0, -2.0, 3.0]])
    np.testing.assert_array_equal(fnn_forward(eye, x), x)
    one = FnnParams([np.array([[2.0]])], [np.array([1.0])], "leaky_relu", 0.01, "leaky_relu")
    assert fnn_forward(one, np.array([[-1.0]]))[0, 0] == pytest.approx(-0.01)
    th = FnnParams.init([2, 4, 3], np.random.default_rng(0), "tanh", final_activation="tanh")
    th.biases = [np.zeros(4), np.zeros(3)]
    np.testing.assert_array_equal(fnn_forward(th, np.zeros((1, 2))), 0.0)


def test_input_gradient_of_linear_critic_is_its_weights():
    c = np.array([[0.5, -1.0, 2.0]])
    net = FnnParams([c], [np.array([0.7])], activation="identity")
    for x in np.random.default_rng(0).standard_normal((5, 3)):
        np.testing.assert_allclose(input_gradient(net, x), c[0])


def test_scalar_penalty_by_hand():
    for theta, pen, grad in ((3.0, 4.0, 4.0), (1.0, 0.0, 0.0)):
        net = FnnParams([np.array([[theta]])], [np.zeros(1)], activation="identity")
        value, grads = penalty_parameter_gradient(net, np.array([[0.3], [-1.2]]), 1.0)
        assert value == pytest.approx(pen)
        assert grads[0][0, 0] == pytest.approx(grad)


def test_adam_zero_gradient_leaves_parameters():
    p = np.array([1.0, 2.0])
    adam_step(AdamState(lr=0.1), [p], [np.zeros(2)])
    np.testing.assert_array_equal(p, [1.0, 2.0])


def test_adam_two_constant_steps_hand_unrolled():
    g, lr, b2, eps = 0.3, 1e-3, 0.999, 1e-8
    p = np.array([0.0])
    state = AdamState(lr=lr)
    for _ in range(2):
        adam_step(state, [p], [np.array([g])])
    # beta1 = 0: m_t = g; v_t = (1 - b2^t) g^2 after bias correction gives g^2
    v1 = (1 - b2) * g * g
    p1 = -lr * g / (np.sqrt(v1 / (1 - b2)) + eps)
    v2 = b2 * v1 + (1 - b2) * g * g
    p2 = p1 - lr * g / (np.sqrt(v2 / (1 - b2**2)) + eps)
    assert abs(p[0] - p2) < 1e-12
