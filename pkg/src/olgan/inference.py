"""Bayesian inversion in the latent space of a trained generator.

A generator here is anything with ``latent_dim``, ``__call__(z, coords) ->
(m, d)`` in physical units for a batch of latent rows, and
``forward_tape(tape, z, coords)`` for the differentiable version.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .nn import AdamState, adam_step


@dataclass(frozen=True)
class NoiseModel:
    """Isotropic Gaussian noise. ``relative_max`` scales by max |clean observation|."""

    level: float
    mode: str = "absolute"

    def __post_init__(self):
        if self.mode not in ("absolute", "relative_max"):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if not self.level > 0:
            raise ValueError("noise level must be positive")

    def sigma(self, clean=None):
        if self.mode == "absolute":
            return float(self.level)
        if clean is None:
            raise ValueError("relative noise needs the clean observation")
        return float(self.level * np.max(np.abs(clean)))


@dataclass
class Observation:
    """Noisy values at sensor coordinates; ``sigma = inf`` switches the data term off."""

    coords: np.ndarray
    values: np.ndarray
    sigma: float
    noise: NoiseModel = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim == 1:
            self.coords = self.coords[:, None]
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if len(self.coords) != len(self.values):
            raise ValueError("one value per observation coordinate required")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @classmethod
    def synthesize(cls, coords, clean, noise, rng):
        clean = np.asarray(clean, dtype=np.float64).ravel()
        sigma = noise.sigma(clean)
        return cls(coords, clean + sigma * rng.standard_normal(clean.shape), sigma, noise)

    @property
    def precision(self):
        return 0.0 if math.isinf(self.sigma) else 1.0 / self.sigma**2


def log_posterior(z, obs, G):
    """Latent log-posterior up to an additive constant.

    ``z`` may be one vector or a batch of rows; returns a float or an array.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    prior = -0.5 * np.sum(Z * Z, axis=1)
    if obs.precision:
        _, d = G(Z, obs.coords)
        r = obs.values - d
        lp = prior - 0.5 * obs.precision * np.sum(r * r, axis=1)
    else:
        lp = prior
    return float(lp[0]) if single else lp


def _neg_log_posterior_tape(tape, zn, obs, G):
    """Sum over rows of ``0.5 ||(d_hat - d(z)) / sigma||^2 + 0.5 ||z||^2``."""
    loss = tape.mul(tape.sum(tape.square(zn)), 0.5)
    if obs.precision:
        _, d = G.forward_tape(tape, zn, obs.coords)
        r = tape.constant(obs.values[None, :]) - d
        loss = loss + tape.mul(tape.sum(tape.square(r)), 0.5 * obs.precision)
    return loss


@dataclass
class MapResult:
    z: np.ndarray
    log_post: float
    starts: np.ndarray  # initial points, one per row
    finals: np.ndarray  # best-seen z per start
    final_log_post: np.ndarray
    history: np.ndarray  # (iters, n_starts) log-posterior trace


def map_estimate(obs, G, iters=1000, lr=0.05, n_starts=5, rng=None, starts=None):
    """Maximize the latent log-posterior with Adam from several starts.

    All starts are optimized together as rows of one batch (the objective is
    a sum of independent per-row terms). Each start keeps its best-seen
    point; the start with the highest log-posterior wins.
    """
    if starts is None:
        rng = np.random.default_rng() if rng is None else rng
        starts = rng.standard_normal((n_starts, G.latent_dim))
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    Z = starts.copy()
    state = AdamState(lr=lr, beta1=0.9, beta2=0.999)
    best = Z.copy()
    best_lp = log_posterior(Z, obs, G)
    trace = np.empty((iters, len(Z)))
    for it in range(iters):
        tape = Tape()
        zn = tape.variable(Z)
        loss = _neg_log_posterior_tape(tape, zn, obs, G)
        (g,) = tape.gradient(loss, [zn])
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite MAP gradient")
        adam_step(state, [Z], [g])
        lp = log_posterior(Z, obs, G)
        if not np.all(np.isfinite(lp)):
            raise FloatingPointError("non-finite MAP objective")
        better = lp > best_lp
        best[better] = Z[better]
        best_lp = np.where(better, lp, best_lp)
        trace[it] = lp
    k = int(np.argmax(best_lp))
    return MapResult(best[k].copy(), float(best_lp[k]), starts, best, best_lp, trace)


@dataclass
class LatentChain:
    samples: np.ndarray  # post-burn-in z rows
    accepted: np.ndarray  # post-burn-in acceptance flags
    log_post: np.ndarray  # post-burn-in log-posterior values
    scale_history: list = field(default_factory=list)  # (step, scale) after each adaptation
    burn_in_acceptance: float = float("nan")

    @property
    def acceptance_rate(self):
        return float(np.mean(self.accepted)) if len(self.accepted) else float("nan")

    @property
    def final_scale(self):
        return self.scale_history[-1][1]

    def __len__(self):
        return len(self.samples)


def adapt_scale(scale, rate, low=0.2, high=0.5, up=1.1, down=0.9):
    if rate > high:
        return scale * up
    if rate < low:
        return scale * down
    return scale


def mh_sample(obs, G, z0, n=10000, burn_in=5000, rng=None, scale=0.1, adapt_every=100):
    """Random-walk Metropolis with an isotropic Gaussian proposal.

    The proposal scale is tuned every ``adapt_every`` burn-in steps towards
    an acceptance rate in [0.2, 0.5] and frozen afterwards.
    """
    if not 0 <= burn_in < n:
        raise ValueError("need 0 <= burn_in < n")
    rng = np.random.default_rng() if rng is None else rng
    z = np.asarray(z0, dtype=np.float64).ravel().copy()
    if not np.all(np.isfinite(z)):
        raise ValueError("initial point must be finite")
    lp = log_posterior(z, obs, G)
    keep = n - burn_in
    samples = np.empty((keep, len(z)))
    lps = np.empty(keep)
    accepted = np.zeros(keep, dtype=bool)
    history = [(0, scale)]
    window = 0
    burn_acc = 0
    for step in range(n):
        prop = z + scale * rng.standard_normal(len(z))
        lp_prop = log_posterior(prop, obs, G)
        # u < 1 always, so a proposal that does not lower the density is always taken.
        acc = rng.random() < math.exp(min(0.0, lp_prop - lp))
        if acc:
            z, lp = prop, lp_prop
        if step < burn_in:
            window += acc
            burn_acc += acc
            if (step + 1) % adapt_every == 0:
                scale = adapt_scale(scale, window / adapt_every)
                history.append((step + 1, scale))
                window = 0
        else:
            k = step - burn_in
            samples[k] = z
            lps[k] = lp
            accepted[k] = acc
    return LatentChain(samples, accepted, lps, history, burn_acc / burn_in if burn_in else float("nan"))


def push_forward(chain, G, coords, batch=2000):
    """Joint posterior samples ``[m, d(coords)]``, one row per chain sample."""
    Z = chain.samples if isinstance(chain, LatentChain) else np.atleast_2d(chain)
    if len(Z) == 0:
        raise ValueError("empty chain")
    out = []
    for start in range(0, len(Z), batch):
        m, d = G(Z[start : start + batch], coords)
        out.append(np.concatenate([m, d], axis=1))
    return np.concatenate(out, axis=0)


@dataclass
class PosteriorSummary:
    mean: np.ndarray
    std: np.ndarray
    mean_sq: np.ndarray
    response_mean: np.ndarray = None
    response_std: np.ndarray = None
    truth: np.ndarray = None

    @property
    def relative_error(self):
        if self.truth is None:
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(self.mean - self.truth) / np.abs(self.truth)

    @property
    def within_3sigma(self):
        if self.truth is None:
            return None
        return np.abs(self.mean - self.truth) <= 3.0 * self.std

    def as_dict(self):
        out = {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "mean_sq": self.mean_sq.tolist(),
        }
        if self.truth is not None:
            out["truth"] = self.truth.tolist()
            # undefined where the truth is zero
            out["relative_error"] = [float(e) if np.isfinite(e) else None for e in self.relative_error]
            out["within_3sigma"] = [bool(b) for b in self.within_3sigma]
        return out


def posterior_stats(pushed, n_m, truth=None):
    """Posterior mean and standard deviation of ``m = pushed[:, :n_m]``.

    The standard deviation comes from the first two moments,
    ``sqrt(E[m^2] - E[m]^2)``, clamped at zero against round-off.
    """
    pushed = np.atleast_2d(np.asarray(pushed, dtype=np.float64))
    if len(pushed) < 2:
        raise ValueError("need at least two posterior samples")
    m = pushed[:, :n_m]
    mu = m.mean(axis=0)
    mu2 = (m * m).mean(axis=0)
    std = np.sqrt(np.clip(mu2 - mu * mu, 0.0, None))
    d = pushed[:, n_m:]
    r_mean = r_std = None
    if d.shape[1]:
        r_mean = d.mean(axis=0)
        r_std = np.sqrt(np.clip((d * d).mean(axis=0) - r_mean**2, 0.0, None))
    return PosteriorSummary(mu, std, mu2, r_mean, r_std, None if truth is None else np.asarray(truth, float))
