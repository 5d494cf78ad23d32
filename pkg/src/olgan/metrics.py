"""Evaluation metrics and the dimensionality-reduction baselines."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .nn import AdamState, FnnParams, adam_step, fnn_forward
from .wgan import explained_variance_ratio

log = logging.getLogger(__name__)


def relative_l2(pred, ref):
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise ValueError("reference has zero norm")
    return float(np.linalg.norm(pred - ref) / denom)


def r_squared(pred, ref):
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    ss_tot = np.sum((ref - ref.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("reference is constant")
    return float(1.0 - np.sum((ref - pred) ** 2) / ss_tot)


def w1_empirical_1d(xs, ys):
    """Exact Wasserstein-1 distance between two 1-D empirical distributions.

    Integrates ``|F_x^{-1}(q) - F_y^{-1}(q)|`` over the merged breakpoints of
    both quantile functions; for equal sizes this is the mean absolute
    difference of the sorted samples.
    """
    x = np.sort(np.asarray(xs, dtype=np.float64).ravel())
    y = np.sort(np.asarray(ys, dtype=np.float64).ravel())
    if x.size == 0 or y.size == 0:
        raise ValueError("both sample sets must be non-empty")
    if x.size == y.size:
        return float(np.mean(np.abs(x - y)))
    nx, ny = x.size, y.size
    # Quantile levels where either inverse CDF jumps.
    q = np.union1d(np.arange(1, nx) / nx, np.arange(1, ny) / ny)
    edges = np.concatenate([[0.0], q, [1.0]])
    mid = 0.5 * (edges[:-1] + edges[1:])
    ix = np.minimum((mid * nx).astype(int), nx - 1)
    iy = np.minimum((mid * ny).astype(int), ny - 1)
    return float(np.sum(np.diff(edges) * np.abs(x[ix] - y[iy])))


def w1_table(real, fake, names=None):
    """Per-dimension W1 between two sample matrices."""
    real = np.atleast_2d(real)
    fake = np.atleast_2d(fake)
    names = names or [f"dim{k}" for k in range(real.shape[1])]
    return {n: w1_empirical_1d(real[:, k], fake[:, k]) for k, n in enumerate(names)}


@dataclass
class PcaResult:
    reconstruction: np.ndarray
    components: np.ndarray  # (n_components, dim)
    mean: np.ndarray
    explained_ratio: np.ndarray


def pca_reduce_reconstruct(samples, n_components):
    """Project centered samples onto the leading principal directions and map back."""
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if n_components > X.shape[1]:
        raise ValueError("more components than dimensions")
    mean = X.mean(axis=0)
    _, _, vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = vt[:n_components]
    recon = (X - mean) @ comps.T @ comps + mean
    return PcaResult(recon, comps, mean, explained_variance_ratio(X))


@dataclass
class AutoencoderConfig:
    hidden: tuple = (32, 32)
    # the decoder mirrors the 2-latent parameter generator, which uses tanh
    activation: str = "tanh"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    iters: int = 10000
    seed: int = 0


@dataclass
class AutoencoderResult:
    reconstruction: np.ndarray
    encoder: FnnParams
    decoder: FnnParams
    losses: np.ndarray

    def encode(self, x):
        return fnn_forward(self.encoder, x)

    def decode(self, z):
        return fnn_forward(self.decoder, z)


def autoencoder_baseline(samples, latent_dim, config=None):
    """Symmetric FNN autoencoder trained full-batch with Adam on reconstruction MSE.

    The decoder mirrors the parameter generator (latent -> hidden -> dim), the
    encoder is its mirror image.
    """
    cfg = config or AutoencoderConfig()
    if latent_dim < 1:
        raise ValueError("latent_dim must be at least 1")
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    rng = np.random.default_rng(cfg.seed)
    dim = X.shape[1]
    hidden = tuple(cfg.hidden)
    encoder = FnnParams.init([dim, *hidden, latent_dim], rng, cfg.activation)
    decoder = FnnParams.init([latent_dim, *hidden[::-1], dim], rng, cfg.activation)
    params = encoder.arrays() + decoder.arrays()
    state = AdamState(cfg.lr, cfg.beta1, cfg.beta2)
    losses = np.empty(cfg.iters + 1)
    for it in range(cfg.iters + 1):
        tape = Tape()
        recon = fnn_forward(decoder, fnn_forward(encoder, X, tape), tape)
        loss = tape.mean(tape.square(recon - X))
        losses[it] = loss.value
        if not np.isfinite(loss.value):
            raise FloatingPointError(f"autoencoder diverged at iteration {it}")
        if it == cfg.iters:
            break
        grads = tape.gradient(loss, [tape.param(p) for p in params])
        adam_step(state, params, grads)
    recon = fnn_forward(decoder, fnn_forward(encoder, X))
    return AutoencoderResult(recon, encoder, decoder, losses)
