"""Forward solvers for the training-data generators.

Fields are stored with the first array axis along the first coordinate, so
``u[i, j]`` is the value at ``(x_i, y_j)`` and ``s[i, n]`` the value at
``(x_i, t_n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import spsolve

TRUTH_PARAMS = (0.4489, 0.7340, 0.1111)
PARAM_BOUNDS = ((0.2, 0.8), (0.2, 0.8), (0.05, 0.15))


def gaussian_source_eval(c1, c2, c3, x, y):
    """Heat source ``10 exp(-((x-c1)^2 + (y-c2)^2) / (2 c3^2))``."""
    if c3 <= 0:
        raise ValueError("c3 must be positive")
    return 10.0 * np.exp(-0.5 * ((x - c1) ** 2 + (y - c2) ** 2) / c3**2)


def _sin5x(x):
    return np.sin(5.0 * x)


@dataclass
class PoissonProblem:
    """``-lap u = f`` on the unit square.

    ``bc="mixed"``: u = 0 on x = 0 and x = 1, outward flux ``flux(x)`` on
    y = 0 and y = 1. ``bc="dirichlet"``: u = ``boundary(x, y)`` everywhere on
    the boundary (used for manufactured-solution checks).
    """

    c1: float = 0.5
    c2: float = 0.5
    c3: float = 0.1
    n: int = 33
    bc: str = "mixed"
    source: Optional[Callable] = None
    flux: Callable = _sin5x
    boundary: Optional[Callable] = None

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("need at least 3 grid points per axis")
        if self.bc not in ("mixed", "dirichlet"):
            raise ValueError(f"unknown boundary mode {self.bc!r}")
        if self.source is None:
            (lo1, hi1), (lo2, hi2), (lo3, hi3) = PARAM_BOUNDS
            if not (lo1 <= self.c1 <= hi1 and lo2 <= self.c2 <= hi2 and lo3 <= self.c3 <= hi3):
                raise ValueError(f"source parameters {(self.c1, self.c2, self.c3)} out of range")

    @property
    def axis(self):
        return np.linspace(0.0, 1.0, self.n)

    def source_values(self, X, Y):
        if self.source is not None:
            return self.source(X, Y)
        return gaussian_source_eval(self.c1, self.c2, self.c3, X, Y)


def _laplacian_1d(m):
    return sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1])


def solve_poisson(problem, tol=1e-10):
    """Five-point finite differences on an ``n x n`` node grid.

    Neumann faces use ghost-point elimination, which keeps second-order
    accuracy up to the boundary. Returns ``u[i, j]`` at ``(x_i, y_j)``.
    """
    n = problem.n
    h = 1.0 / (n - 1)
    xs = problem.axis
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    f = problem.source_values(X, Y)
    u = np.zeros((n, n))

    if problem.bc == "dirichlet":
        bnd = problem.boundary or (lambda x, y: np.zeros_like(x))
        u[:] = bnd(X, Y)
        m = n - 2
        A = sp.kronsum(_laplacian_1d(m), _laplacian_1d(m), format="csr") / h**2
        rhs = f[1:-1, 1:-1].copy()
        rhs[0, :] += u[0, 1:-1] / h**2
        rhs[-1, :] += u[-1, 1:-1] / h**2
        rhs[:, 0] += u[1:-1, 0] / h**2
        rhs[:, -1] += u[1:-1, -1] / h**2
        sol = spsolve(A, rhs.ravel())
        _check_residual(A, sol, rhs.ravel(), tol)
        u[1:-1, 1:-1] = sol.reshape(m, m)
        return u

    # Unknowns: x-interior columns, every y row (Neumann rows included).
    mx = n - 2
    Lx = _laplacian_1d(mx)
    Ly = _laplacian_1d(n).tolil()
    # Ghost points double the inward neighbour on y = 0 and y = 1.
    Ly[0, 1] = -2.0
    Ly[n - 1, n - 2] = -2.0
    A = (sp.kron(Lx, sp.identity(n)) + sp.kron(sp.identity(mx), Ly.tocsr())).tocsr() / h**2
    rhs = f[1:-1, :].copy()
    g = problem.flux(xs[1:-1])
    rhs[:, 0] += 2.0 * g / h
    rhs[:, -1] += 2.0 * g / h
    sol = spsolve(A, rhs.ravel())
    _check_residual(A, sol, rhs.ravel(), tol)
    u[1:-1, :] = sol.reshape(mx, n)
    return u


def _check_residual(A, x, b, tol):
    res = np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1.0)
    if not np.isfinite(res) or res > tol:
        raise RuntimeError(f"linear solve did not converge (relative residual {res:.3e})")


@dataclass
class SensorSet:
    coords: np.ndarray
    layout: str = "uniform"

    def __post_init__(self):
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=np.float64))

    def __len__(self):
        return len(self.coords)


def uniform_sensors(n_per_axis=9, lo=0.1, hi=0.9):
    """``n_per_axis**2`` sensors on a uniform lattice, x varying slowest."""
    ax = np.linspace(lo, hi, n_per_axis)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    return SensorSet(np.column_stack([X.ravel(), Y.ravel()]), "uniform")


def random_sensors(n, rng, lo=0.1, hi=0.9, avoid=None, dim=2):
    """``n`` sensors uniform in ``[lo, hi]^dim``, none coinciding with ``avoid``."""
    pts = rng.uniform(lo, hi, size=(n, dim))
    if avoid is not None:
        avoid = np.atleast_2d(avoid)
        for k in range(n):
            while np.min(np.abs(avoid - pts[k]).max(axis=1)) < 1e-9:
                pts[k] = rng.uniform(lo, hi, size=dim)
    return SensorSet(pts, "random")


def interp_sensors(values, sensors, axes=None):
    """Bilinear interpolation of a node field at sensor coordinates.

    ``values[i, j]`` lives on ``axes = (a0, a1)`` (uniform unit grids by
    default); raises if a sensor lies outside the grid.
    """
    values = np.asarray(values, dtype=np.float64)
    pts = sensors.coords if isinstance(sensors, SensorSet) else np.atleast_2d(sensors)
    if axes is None:
        axes = (np.linspace(0, 1, values.shape[0]), np.linspace(0, 1, values.shape[1]))
    a0, a1 = (np.asarray(a, dtype=np.float64) for a in axes)
    p0, p1 = pts[:, 0], pts[:, 1]
    eps = 1e-12
    if (
        np.any(p0 < a0[0] - eps) or np.any(p0 > a0[-1] + eps)
        or np.any(p1 < a1[0] - eps) or np.any(p1 > a1[-1] + eps)
    ):
        raise ValueError("sensor outside the grid domain")
    i = np.clip(np.searchsorted(a0, p0, side="right") - 1, 0, len(a0) - 2)
    j = np.clip(np.searchsorted(a1, p1, side="right") - 1, 0, len(a1) - 2)
    s = np.clip((p0 - a0[i]) / (a0[i + 1] - a0[i]), 0.0, 1.0)
    t = np.clip((p1 - a1[j]) / (a1[j + 1] - a1[j]), 0.0, 1.0)
    return (
        (1 - s) * (1 - t) * values[i, j]
        + s * (1 - t) * values[i + 1, j]
        + (1 - s) * t * values[i, j + 1]
        + s * t * values[i + 1, j + 1]
    )


@dataclass
class DiffusionReactionProblem:
    """``s_t = D s_xx + k s^2 + u(x)`` on [0, 1]^2 with zero IC and BC.

    ``source`` holds u on ``source_x`` (100 uniform points by default); it is
    linearly interpolated onto the ``nx`` solver nodes.
    """

    source: np.ndarray
    source_x: Optional[np.ndarray] = None
    diffusion: float = 0.01
    reaction: float = 0.01
    nx: int = 100
    nt: int = 100
    t_end: float = 1.0

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float64)
        if self.source_x is None:
            self.source_x = np.linspace(0.0, 1.0, len(self.source))
        if self.diffusion <= 0:
            raise ValueError("diffusion coefficient must be positive")
        if self.nx < 3 or self.nt < 2:
            raise ValueError("grid too small")


@dataclass
class DiffusionReactionSolution:
    x: np.ndarray
    t: np.ndarray
    s: np.ndarray  # s[i, n] at (x_i, t_n)
    newton_iters: list = field(default_factory=list)

    def resample(self, nx=33, nt=33):
        """Linear interpolation onto a uniform ``nx x nt`` grid of the same domain."""
        xq = np.linspace(self.x[0], self.x[-1], nx)
        tq = np.linspace(self.t[0], self.t[-1], nt)
        tmp = np.array([np.interp(xq, self.x, self.s[:, n]) for n in range(len(self.t))]).T
        return np.array([np.interp(tq, self.t, row) for row in tmp])


def solve_diffusion_reaction(problem, newton_tol=1e-10, max_newton=50):
    """Crank-Nicolson in time, central differences in space, Newton per step."""
    nx, nt = problem.nx, problem.nt
    x = np.linspace(0.0, 1.0, nx)
    t = np.linspace(0.0, problem.t_end, nt)
    dx = x[1] - x[0]
    dt = t[1] - t[0]
    D, k = problem.diffusion, problem.reaction
    u = np.interp(x, problem.source_x, problem.source)[1:-1]
    m = nx - 2
    r = D / dx**2

    def lap(v):
        out = -2.0 * v
        out[1:] += v[:-1]
        out[:-1] += v[1:]
        return r * out

    s = np.zeros((nx, nt))
    cur = np.zeros(m)
    iters = []
    ab = np.zeros((3, m))
    for n in range(1, nt):
        explicit = cur + 0.5 * dt * (lap(cur) + k * cur**2 + 2.0 * u)
        nxt = cur.copy()
        for it in range(1, max_newton + 1):
            F = nxt - 0.5 * dt * (lap(nxt) + k * nxt**2) - explicit
            ab[0, 1:] = -0.5 * dt * r
            ab[1, :] = 1.0 + dt * r - dt * k * nxt
            ab[2, :-1] = -0.5 * dt * r
            delta = solve_banded((1, 1), ab, -F)
            nxt += delta
            if np.max(np.abs(delta)) < newton_tol:
                break
        else:
            raise RuntimeError(f"Newton did not converge at step {n}")
        iters.append(it)
        cur = nxt
        s[1:-1, n] = cur
    return DiffusionReactionSolution(x, t, s, iters)


def steady_diffusion(diffusion, source, nx=100):
    """Solve ``-D s'' = source(x)`` with zero Dirichlet ends on ``nx`` nodes."""
    x = np.linspace(0.0, 1.0, nx)
    dx = x[1] - x[0]
    m = nx - 2
    f = np.broadcast_to(np.asarray(source(x[1:-1]) if callable(source) else source, float), (m,))
    ab = np.zeros((3, m))
    ab[0, 1:] = -diffusion / dx**2
    ab[1, :] = 2 * diffusion / dx**2
    ab[2, :-1] = -diffusion / dx**2
    s = np.zeros(nx)
    s[1:-1] = solve_banded((1, 1), ab, f)
    return x, s
