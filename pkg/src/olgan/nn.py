"""Fully-connected networks and the Adam optimizer on top of :mod:`olgan.autodiff`."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, Tape

ACTIVATIONS = ("leaky_relu", "tanh", "identity")


def kaiming_uniform_init(shape, slope=0.01, rng=None):
    """Weight matrix of ``shape = (fan_out, fan_in)`` drawn from U(-b, b).

    ``b = gain * sqrt(3 / fan_in)`` with the LeakyReLU gain
    ``sqrt(2 / (1 + slope**2))``.
    """
    fan_out, fan_in = shape
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"invalid weight shape {shape}")
    rng = np.random.default_rng() if rng is None else rng
    gain = math.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


@dataclass
class FnnParams:
    """Weights ``(fan_out, fan_in)`` and biases of a dense network.

    ``activation`` applies after every hidden layer; ``final_activation``
    after the last one (identity by default).
    """

    weights: list
    biases: list
    activation: str = "leaky_relu"
    slope: float = 0.01
    final_activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS or self.final_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}/{self.final_activation!r}")
        if not 0.0 < self.slope < 1.0:
            raise ValueError("LeakyReLU slope must lie in (0, 1)")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: fan_in {w.shape[1]} does not chain")

    @classmethod
    def init(cls, sizes, rng, activation="leaky_relu", slope=0.01, final_activation="identity"):
        """Network with layer widths ``sizes = [in, hidden..., out]``."""
        weights = [
            kaiming_uniform_init((n_out, n_in), slope, rng)
            for n_in, n_out in zip(sizes[:-1], sizes[1:])
        ]
        biases = [np.zeros(w.shape[0]) for w in weights]
        return cls(weights, biases, activation, slope, final_activation)

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    def arrays(self):
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return FnnParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.slope,
            self.final_activation,
        )


def _act(x, kind, slope):
    if kind == "leaky_relu":
        return np.where(x > 0, x, slope * x)
    if kind == "tanh":
        return np.tanh(x)
    return x


def _act_tape(tape, x, kind, slope):
    if kind == "leaky_relu":
        return tape.leaky_relu(x, slope)
    if kind == "tanh":
        return tape.tanh(x)
    return x


def fnn_forward(params, x, tape=None):
    """Evaluate the network on a batch ``x`` of shape (n, in_dim).

    Without a tape this is a plain numpy evaluation. With a tape every
    operation is recorded and the weights become differentiable leaves.
    ``x`` may itself be a Node of that tape.
    """
    last = len(params.weights) - 1
    if tape is None:
        h = np.asarray(x, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != params.in_dim:
            raise ValueError(f"input shape {h.shape} does not match fan_in {params.in_dim}")
        for k, (w, b) in enumerate(zip(params.weights, params.biases)):
            h = h @ w.T + b
            h = _act(h, params.final_activation if k == last else params.activation, params.slope)
        return h

    h = x if isinstance(x, Node) else tape.constant(x)
    if h.value.ndim != 2 or h.shape[1] != params.in_dim:
        raise ValueError(f"input shape {h.shape} does not match fan_in {params.in_dim}")
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = tape.matmul(h, tape.transpose(tape.param(w))) + tape.param(b)
        h = _act_tape(tape, h, params.final_activation if k == last else params.activation, params.slope)
    return h


def param_gradients(tape, output, params):
    """Gradients of scalar ``output`` w.r.t. ``params.arrays()``."""
    return tape.gradient(output, [tape.param(a) for a in params.arrays()])


def input_gradient(params, x):
    """Gradient of a scalar-output network w.r.t. its input vector ``x``."""
    if params.out_dim != 1:
        raise ValueError("input_gradient needs a scalar-output network")
    tape = Tape()
    xn = tape.variable(np.asarray(x, dtype=np.float64).reshape(1, -1))
    out = fnn_forward(params, xn, tape)
    (g,) = tape.gradient(tape.sum(out), [xn])
    return g.reshape(-1)


def gradient_norm_penalty(tape, params, x, lam):
    """Record ``lam * mean_i (||grad_x D(x_i)||_2 - 1)^2`` on ``tape``.

    ``x`` is a batch (n, in_dim). Returns the penalty Node; it depends on the
    parameter leaves through a recorded first backward pass.
    """
    xn = tape.variable(np.asarray(x, dtype=np.float64))
    out = fnn_forward(params, xn, tape)
    # D is applied row-wise, so d(sum D)/dx stacks the per-row input gradients.
    (gx,) = tape.gradient(tape.sum(out), [xn], create_graph=True)
    norm = tape.sqrt(tape.sum(tape.square(gx), axis=1))
    dev = tape.square(norm - 1.0)
    return tape.mul(tape.mean(dev), float(lam))


def penalty_parameter_gradient(params, x, lam):
    """Penalty value and its gradients w.r.t. ``params.arrays()``.

    ``x`` may be a single vector or a batch of rows.
    """
    if params.out_dim != 1:
        raise ValueError("penalty needs a scalar-output network")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    tape = Tape()
    pen = gradient_norm_penalty(tape, params, x, lam)
    grads = param_gradients(tape, pen, params)
    return float(pen.value), grads


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def adam_step(state, params, grads):
    """One bias-corrected Adam update, applied in place to ``params``.

    ``params`` is a list of arrays and ``grads`` a matching list. Moment
    buffers are created lazily on the first call.
    """
    if len(params) != len(grads):
        raise ValueError("parameter/gradient count mismatch")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient passed to Adam")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
