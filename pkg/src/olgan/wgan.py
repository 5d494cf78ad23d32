"""WGAN-GP training of operator-learning generators."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tape
from .nn import AdamState, FnnParams, adam_step, fnn_forward, gradient_norm_penalty, param_gradients

log = logging.getLogger(__name__)

CRITIC_HIDDEN = (64, 64, 64)


class TrainingError(RuntimeError):
    """Training hit a non-finite value; ``step`` and ``stage`` say where."""

    def __init__(self, message, step=None, stage=None):
        super().__init__(message)
        self.step = step
        self.stage = stage


@dataclass
class TrainConfig:
    lam: float = 10.0
    n_critic: int = 5
    epochs: int = 2000
    batch_size: int = 250
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.999
    seed: int = 0
    critic_hidden: tuple = CRITIC_HIDDEN
    checkpoint_every: int = 0  # epochs; 0 disables

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("penalty coefficient must be non-negative")
        if self.n_critic < 1:
            raise ValueError("n_critic must be at least 1")
        self.critic_hidden = tuple(self.critic_hidden)

    def as_dict(self):
        d = asdict(self)
        d["critic_hidden"] = list(self.critic_hidden)
        return d


@dataclass
class TrainHistory:
    critic_loss: list = field(default_factory=list)
    penalty: list = field(default_factory=list)
    wasserstein: list = field(default_factory=list)
    gen_loss: list = field(default_factory=list)
    n_critic: int = 5

    def rows(self):
        """One row per generator step: step, critic loss, gen loss, penalty, W estimate.

        Critic columns average the ``n_critic`` critic steps preceding the
        generator step.
        """
        k = self.n_critic
        out = []
        for s, g in enumerate(self.gen_loss):
            sl = slice(s * k, (s + 1) * k)
            out.append(
                (
                    s,
                    float(np.mean(self.critic_loss[sl])),
                    g,
                    float(np.mean(self.penalty[sl])),
                    float(np.mean(self.wasserstein[sl])),
                )
            )
        return out

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("step,critic_loss,gen_loss,penalty,wasserstein_estimate\n")
            for row in self.rows():
                fh.write(f"{row[0]}," + ",".join(repr(v) for v in row[1:]) + "\n")


def init_critic(n_in, rng, hidden=CRITIC_HIDDEN, slope=0.01):
    """Scalar-output LeakyReLU critic over the standardized joint vector."""
    return FnnParams.init([n_in, *hidden, 1], rng, "leaky_relu", slope)


def interpolate(real, fake, eps):
    """``eps * real + (1 - eps) * fake`` with one ``eps`` per row."""
    eps = np.asarray(eps, dtype=np.float64).reshape(-1, 1)
    return eps * real + (1.0 - eps) * fake


def gradient_penalty(critic, real, fake, lam, rng=None, eps=None):
    """Penalty ``lam * mean((||grad D(a_hat)|| - 1)^2)`` and its parameter gradients."""
    real = np.atleast_2d(real)
    fake = np.atleast_2d(fake)
    if real.shape != fake.shape:
        raise ValueError("real and fake batches must have the same shape")
    if eps is None:
        eps = rng.uniform(size=len(real))
    tape = Tape()
    pen = gradient_norm_penalty(tape, critic, interpolate(real, fake, eps), lam)
    return float(pen.value), param_gradients(tape, pen, critic)


def critic_objective(tape, critic, real, fake, interp, lam):
    """Record ``E[D(fake)] - E[D(real)] + penalty``; returns (loss, W estimate, penalty) nodes."""
    w = tape.mean(fnn_forward(critic, real, tape)) - tape.mean(fnn_forward(critic, fake, tape))
    pen = gradient_norm_penalty(tape, critic, interp, lam) if lam else tape.constant(0.0)
    return pen - w, w, pen


def critic_step(critic, state, generator, real, coords, config, rng):
    """One Adam step on the critic. ``real`` is a standardized joint batch."""
    n = len(real)
    z = rng.standard_normal((n, generator.latent_dim))
    fake = generator.joint_std(z, coords)
    interp = interpolate(real, fake, rng.uniform(size=n))
    tape = Tape()
    loss, w, pen = critic_objective(tape, critic, real, fake, interp, config.lam)
    if not np.isfinite(loss.value):
        raise TrainingError("non-finite critic loss", stage="critic")
    grads = param_gradients(tape, loss, critic)
    adam_step(state, critic.arrays(), grads)
    return float(loss.value), float(pen.value), float(w.value)


def generator_loss(tape, critic, generator, z, coords):
    fake = generator.joint_std(z, coords, tape)
    return tape.neg(tape.mean(fnn_forward(critic, fake, tape)))


def generator_step(critic, generator, state, coords, batch_size, rng):
    """One Adam step on the generator's trainable arrays; the critic is left untouched."""
    z = rng.standard_normal((batch_size, generator.latent_dim))
    tape = Tape()
    loss = generator_loss(tape, critic, generator, z, coords)
    if not np.isfinite(loss.value):
        raise TrainingError("non-finite generator loss", stage="generator")
    params = generator.parameters()
    grads = tape.gradient(loss, [tape.param(p) for p in params])
    adam_step(state, params, grads)
    return float(loss.value)


def standardized_joint(dataset, scaler):
    m, d = scaler.to_std(dataset.params, dataset.responses)
    return np.concatenate([m, d], axis=1)


def train(dataset, generator, critic, config, on_checkpoint=None):
    """Alternate ``n_critic`` critic steps and one generator step per minibatch.

    An epoch is one pass over the shuffled dataset. The same real minibatch
    feeds the ``n_critic`` critic steps; each draws fresh latents and
    interpolation weights. ``on_checkpoint(epoch, history)`` is called every
    ``config.checkpoint_every`` epochs and after the last one.
    """
    if config.batch_size > dataset.n_samples:
        raise ValueError("batch size exceeds dataset size")
    rng = np.random.default_rng(config.seed)
    real_all = standardized_joint(dataset, generator.scaler)
    coords = dataset.coords
    c_state = AdamState(config.lr, config.beta1, config.beta2)
    g_state = AdamState(config.lr, config.beta1, config.beta2)
    hist = TrainHistory(n_critic=config.n_critic)
    n_batches = dataset.n_samples // config.batch_size
    for epoch in range(config.epochs):
        order = rng.permutation(dataset.n_samples)
        for b in range(n_batches):
            real = real_all[order[b * config.batch_size : (b + 1) * config.batch_size]]
            for _ in range(config.n_critic):
                try:
                    loss, pen, w = critic_step(critic, c_state, generator, real, coords, config, rng)
                except FloatingPointError as exc:
                    raise TrainingError(str(exc), len(hist.critic_loss), "critic") from exc
                hist.critic_loss.append(loss)
                hist.penalty.append(pen)
                hist.wasserstein.append(w)
            try:
                g = generator_step(critic, generator, g_state, coords, config.batch_size, rng)
            except FloatingPointError as exc:
                raise TrainingError(str(exc), len(hist.gen_loss), "generator") from exc
            hist.gen_loss.append(g)
        if on_checkpoint and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            on_checkpoint(epoch + 1, hist)
        if (epoch + 1) % max(1, config.epochs // 10) == 0:
            log.info(
                "epoch %d/%d  W=%.4f  penalty=%.4f  gen=%.4f",
                epoch + 1, config.epochs, hist.wasserstein[-1], hist.penalty[-1], hist.gen_loss[-1],
            )
    periodic = config.checkpoint_every and config.epochs % config.checkpoint_every == 0
    if on_checkpoint and config.epochs and not periodic:
        on_checkpoint(config.epochs, hist)
    return hist


def explained_variance_ratio(samples, n_components=None):
    """PCA spectrum normalized to sum to 1, zero-padded to the sample dimension."""
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if X.shape[0] < 2:
        raise ValueError("need at least two samples")
    sv = np.linalg.svd(X - X.mean(axis=0), compute_uv=False)
    var = sv**2
    out = np.zeros(X.shape[1])
    total = var.sum()
    if total > 0:
        out[: len(var)] = var / total
    return out if n_components is None else out[:n_components]


def spectrum_diagnostic(real, fake, n_components=None):
    """Explained-variance-ratio sequences of the real and generated populations."""
    return explained_variance_ratio(real, n_components), explained_variance_ratio(fake, n_components)
