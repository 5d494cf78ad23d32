import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog
from scipy.stats import wasserstein_distance

from olgan.metrics import (
    AutoencoderConfig,
    autoencoder_baseline,
    pca_reduce_reconstruct,
    r_squared,
    relative_l2,
    w1_empirical_1d,
    w1_table,
)


def w1_transport_lp(x, y):
    """Optimal transport between uniform empirical measures, solved as a linear program."""
    n, m = len(x), len(y)
    cost = np.abs(np.subtract.outer(x, y)).ravel()
    A = []
    for i in range(n):
        row = np.zeros((n, m))
        row[i] = 1
        A.append(row.ravel())
    for j in range(m):
        col = np.zeros((n, m))
        col[:, j] = 1
        A.append(col.ravel())
    b = [1 / n] * n + [1 / m] * m
    return linprog(cost, A_eq=np.array(A), b_eq=b, bounds=(0, None), method="highs").fun


def test_relative_l2_and_r2():
    assert relative_l2([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_l2([0.0, 0.0], [3.0, 4.0]) == 1.0
    assert r_squared([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0
    assert r_squared([2.0, 2.0, 2.0], [1.0, 2.0, 3.0]) == 0.0
    with pytest.raises(ValueError):
        relative_l2([1.0], [0.0])
    with pytest.raises(ValueError):
        r_squared([1.0, 2.0], [1.0, 1.0])


def test_w1_equal_sizes_matches_permutation_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = rng.integers(1, 6)
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        best = min(np.mean(np.abs(x - y[list(p)])) for p in itertools.permutations(range(n)))
        assert w1_empirical_1d(x, y) == pytest.approx(best, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    x=st.lists(st.floats(-10, 10), min_size=1, max_size=7),
    y=st.lists(st.floats(-10, 10), min_size=1, max_size=7),
)
def test_w1_matches_transport_lp_and_scipy(x, y):
    w = w1_empirical_1d(x, y)
    assert w == pytest.approx(w1_transport_lp(np.array(x), np.array(y)), abs=1e-7)
    assert w == pytest.approx(wasserstein_distance(x, y), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(x=st.lists(st.floats(-10, 10), min_size=1, max_size=8), shift=st.floats(-5, 5))
def test_w1_metric_properties(x, shift):
    x = np.array(x)
    assert w1_empirical_1d(x, x) == 0.0
    assert w1_empirical_1d(x, x + shift) == pytest.approx(abs(shift), abs=1e-9)
    y = x[::-1] * 0.5
    assert w1_empirical_1d(x, y) == pytest.approx(w1_empirical_1d(y, x), abs=1e-12)


def test_w1_table_and_empty_input():
    t = w1_table(np.zeros((3, 2)), np.ones((4, 2)), ["a", "b"])
    assert t == {"a": 1.0, "b": 1.0}
    with pytest.raises(ValueError):
        w1_empirical_1d([], [1.0])


def test_pca_full_rank_is_identity_and_truncation_drops_minor_axis():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((500, 3)) * [5.0, 2.0, 0.1]
    np.testing.assert_allclose(pca_reduce_reconstruct(x, 3).reconstruction, x, atol=1e-10)
    r = pca_reduce_reconstruct(x, 2)
    assert np.abs(r.reconstruction[:, :2] - x[:, :2]).max() < 0.2
    assert r.reconstruction[:, 2].std() < 0.02
    with pytest.raises(ValueError):
        pca_reduce_reconstruct(x, 4)


def test_autoencoder_reduces_reconstruction_error():
    rng = np.random.default_rng(1)
    t = rng.uniform(-1, 1, (200, 1))
    x = np.hstack([t, t**2, -t])
    res = autoencoder_baseline(x, 1, AutoencoderConfig(hidden=(16,), iters=1500, lr=1e-2))
    assert res.losses[-1] < 0.1 * res.losses[0]
    assert res.reconstruction.shape == x.shape
    np.testing.assert_allclose(res.decode(res.encode(x)), res.reconstruction)


def test_metric_hand_values():
    ref = np.array([1.0, -2.0, 3.0])
    assert relative_l2(2 * ref, ref) == pytest.approx(1.0)
    assert r_squared(np.full(3, ref.mean()), ref) == pytest.approx(0.0)
    assert w1_empirical_1d([0.0, 2.0], [1.0, 3.0]) == 1.0
    assert w1_empirical_1d([0.0, 2.0, 5.0], [1.0, 7.0, 3.0]) == pytest.approx(w1_transport_lp(np.array([0.0, 2.0, 5.0]), np.array([1.0, 7.0, 3.0])))


def test_pca_rank_one_exact():
    x = np.outer(np.arange(20.0), [1.0, 2.0, -1.0]) + 4.0
    np.testing.assert_allclose(pca_reduce_reconstruct(x, 1).reconstruction, x, atol=1e-10)


def test_linear_autoencoder_matches_pca_error():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((300, 4)) @ np.diag([3.0, 2.0, 0.5, 0.2])
    pca_err = np.mean((pca_reduce_reconstruct(x, 2).reconstruction - x) ** 2)
    res = autoencoder_baseline(x, 2, AutoencoderConfig(hidden=(), activation="identity", iters=5000, lr=1e-2))
    ae_err = np.mean((res.reconstruction - x) ** 2)
    assert ae_err <= 1.1 * pca_err


def test_full_width_autoencoder_reaches_small_error():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, (200, 3))
    res = autoencoder_baseline(x, 3, AutoencoderConfig(hidden=(), activation="identity", iters=5000, lr=1e-2))
    assert res.losses[-1] < 1e-4
    assert res.losses[-1] < res.losses[0]
