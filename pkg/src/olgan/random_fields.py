"""Latin hypercube sampling and Gaussian random fields via truncated KLE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SquaredExpKernel:
    lengthscale: float
    variance: float = 1.0

    def __post_init__(self):
        if self.lengthscale <= 0:
            raise ValueError("lengthscale must be positive")

    def matrix(self, xs, ys=None):
        xs = _as_points(xs)
        ys = xs if ys is None else _as_points(ys)
        d2 = ((xs[:, None, :] - ys[None, :, :]) ** 2).sum(-1)
        return self.variance * np.exp(-0.5 * d2 / self.lengthscale**2)


def kernel_eval(kernel, x, y):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise ValueError("points must have the same dimension")
    d2 = float(((x - y) ** 2).sum())
    return kernel.variance * np.exp(-0.5 * d2 / kernel.lengthscale**2)


def _as_points(grid):
    grid = np.asarray(grid, dtype=np.float64)
    return grid[:, None] if grid.ndim == 1 else grid


@dataclass
class KleBasis:
    grid: np.ndarray
    eigenvalues: np.ndarray  # retained, nonincreasing
    modes: np.ndarray  # (n_points, n_modes), orthonormal columns
    energy: float  # fraction of total variance retained
    total: float

    @property
    def n_modes(self):
        return len(self.eigenvalues)


def kle_from_matrix(cov, grid, energy=0.999):
    """Truncated spectral basis of a symmetric covariance matrix."""
    if not 0.0 < energy <= 1.0:
        raise ValueError("energy fraction must lie in (0, 1]")
    cov = np.asarray(cov, dtype=np.float64)
    if cov.size == 0:
        raise ValueError("empty grid")
    lam, psi = np.linalg.eigh(cov)
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    psi = psi[:, order]
    total = lam.sum()
    if total <= 0:
        return KleBasis(np.asarray(grid), lam[:0], psi[:, :0], 1.0, 0.0)
    frac = np.cumsum(lam) / total
    # Guard the comparison against round-off in the cumulative sum.
    n = int(np.searchsorted(frac, energy - 1e-12) + 1)
    n = min(n, len(lam))
    return KleBasis(np.asarray(grid), lam[:n], psi[:, :n], float(frac[n - 1]), float(total))


def build_kle(kernel, grid, energy=0.999):
    """Eigenpairs of the kernel matrix on ``grid`` retaining ``energy`` of the variance."""
    pts = _as_points(grid)
    if len(pts) == 0:
        raise ValueError("empty grid")
    return kle_from_matrix(kernel.matrix(pts), grid, energy)


def sample_gp(basis, rng, n=None, xi=None):
    """Field samples ``sum_k sqrt(lam_k) xi_k psi_k`` on the basis grid.

    Returns one field (n=None) or an (n, n_points) array. ``xi`` overrides the
    standard-normal coefficients.
    """
    if xi is None:
        size = basis.n_modes if n is None else (n, basis.n_modes)
        xi = rng.standard_normal(size)
    xi = np.asarray(xi, dtype=np.float64)
    return (xi * np.sqrt(basis.eigenvalues)) @ basis.modes.T


def lhs_sample(n, bounds, rng):
    """Latin hypercube: one point per stratum per dimension, mapped into ``bounds``."""
    bounds = np.asarray(bounds, dtype=np.float64)
    if n < 1:
        raise ValueError("need at least one sample")
    if bounds.ndim != 2 or bounds.shape[1] != 2 or np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValueError("bounds must be (dim, 2) with lower < upper")
    dim = len(bounds)
    u = np.empty((n, dim))
    for j in range(dim):
        strata = rng.permutation(n)
        u[:, j] = (strata + rng.uniform(size=n)) / n
    return bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0])
