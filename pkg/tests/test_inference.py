import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from olgan.inference import (
    LatentChain,
    NoiseModel,
    Observation,
    adapt_scale,
    log_posterior,
    map_estimate,
    mh_sample,
    posterior_stats,
    push_forward,
)


class IdentityGenerator:
    """m = z and d(coords) = z: the linear-Gaussian problem with a closed-form posterior."""

    def __init__(self, k):
        self.latent_dim = k

    def __call__(self, z, coords):
        z = np.atleast_2d(z)
        return z.copy(), z.copy()

    def forward_tape(self, tape, z, coords):
        return z, z


def prior_only(k):
    return Observation(np.zeros((k, 1)), np.zeros(k), math.inf)


def batch_means_se(x, n_batches=20):
    b = np.array_split(x, n_batches)
    return np.std([c.mean() for c in b], ddof=1) / math.sqrt(n_batches)


def test_noise_models():
    assert NoiseModel(0.01).sigma() == 0.01
    assert NoiseModel(0.1, "relative_max").sigma(np.array([-3.0, 2.0])) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        NoiseModel(0.0)
    with pytest.raises(ValueError):
        NoiseModel(0.1, "relative_mean")


def test_synthesized_noise_statistics():
    obs = Observation.synthesize(np.zeros((20000, 1)), np.ones(20000), NoiseModel(0.5), np.random.default_rng(0))
    assert abs(obs.values.mean() - 1.0) < 0.02
    assert abs(obs.values.std() - 0.5) < 0.01


def test_log_posterior_closed_form():
    G = IdentityGenerator(3)
    obs = Observation(np.zeros((3, 1)), [1.0, -2.0, 0.5], 0.5)
    z = np.array([0.2, 0.1, -0.3])
    expected = -0.5 * z @ z - 0.5 * np.sum((obs.values - z) ** 2) / 0.25
    assert log_posterior(z, obs, G) == pytest.approx(expected, rel=1e-14)
    batch = log_posterior(np.vstack([z, 2 * z]), obs, G)
    assert batch.shape == (2,) and batch[0] == pytest.approx(expected, rel=1e-14)


def test_infinite_sigma_leaves_only_prior():
    z = np.array([1.0, 2.0])
    assert log_posterior(z, prior_only(2), IdentityGenerator(2)) == -2.5


@settings(max_examples=20, deadline=None)
@given(
    d=st.lists(st.floats(-3, 3), min_size=1, max_size=4),
    sigma=st.floats(0.1, 2.0),
)
def test_map_matches_linear_gaussian_solution(d, sigma):
    d = np.array(d)
    obs = Observation(np.zeros((len(d), 1)), d, sigma)
    res = map_estimate(obs, IdentityGenerator(len(d)), iters=1000, lr=0.05, rng=np.random.default_rng(0))
    np.testing.assert_allclose(res.z, d / (1 + sigma**2), atol=1e-3)
    assert res.log_post == pytest.approx(log_posterior(res.z, obs, IdentityGenerator(len(d))))


def test_map_uses_explicit_starts():
    obs = Observation(np.zeros((1, 1)), [1.0], 1.0)
    res = map_estimate(obs, IdentityGenerator(1), iters=10, starts=[[5.0], [0.4]])
    np.testing.assert_array_equal(res.starts, [[5.0], [0.4]])
    assert res.history.shape == (10, 2)
    assert abs(res.z[0] - 0.5) < abs(res.finals[0, 0] - 0.5) or res.z[0] == res.finals[1, 0]


def test_adapt_scale_rule():
    assert adapt_scale(1.0, 0.6) == pytest.approx(1.1)
    assert adapt_scale(1.0, 0.1) == pytest.approx(0.9)
    assert adapt_scale(1.0, 0.3) == 1.0
    assert adapt_scale(1.0, 0.5) == 1.0 and adapt_scale(1.0, 0.2) == 1.0


def test_sampler_moments_within_monte_carlo_error():
    """Standard-normal target: errors bounded by 4 batch-means standard errors."""
    chain = mh_sample(prior_only(3), IdentityGenerator(3), np.zeros(3), 20000, 5000, np.random.default_rng(11))
    assert 0.2 <= chain.acceptance_rate <= 0.5
    x = chain.samples
    for j in range(3):
        assert abs(x[:, j].mean()) < 4 * batch_means_se(x[:, j])
        assert abs(x[:, j].std() - 1.0) < 4 * batch_means_se(x[:, j] ** 2)


def test_sampler_recovers_linear_gaussian_posterior():
    sigma = 0.5
    d = np.array([1.0, -0.5])
    obs = Observation(np.zeros((2, 1)), d, sigma)
    chain = mh_sample(obs, IdentityGenerator(2), np.zeros(2), 30000, 5000, np.random.default_rng(2))
    mean, sd = d / (1 + sigma**2), math.sqrt(sigma**2 / (1 + sigma**2))
    x = chain.samples
    for j in range(2):
        assert abs(x[:, j].mean() - mean[j]) < 4 * batch_means_se(x[:, j])
        assert abs(x[:, j].std() - sd) < 0.05 * sd


def test_scale_frozen_after_burn_in_and_recorded():
    chain = mh_sample(prior_only(2), IdentityGenerator(2), np.zeros(2), 1000, 500, np.random.default_rng(0))
    assert len(chain) == 500
    steps = [s for s, _ in chain.scale_history]
    assert steps == list(range(0, 501, 100))
    assert chain.scale_history[0][1] == 0.1


def test_sampler_is_reproducible():
    runs = [
        mh_sample(prior_only(2), IdentityGenerator(2), np.zeros(2), 600, 100, np.random.default_rng(5)).samples
        for _ in range(2)
    ]
    np.testing.assert_array_equal(*runs)


def test_sampler_input_validation():
    with pytest.raises(ValueError):
        mh_sample(prior_only(1), IdentityGenerator(1), np.zeros(1), 10, 10)
    with pytest.raises(ValueError):
        mh_sample(prior_only(1), IdentityGenerator(1), np.array([np.nan]), 10, 5)


def test_push_forward_and_stats():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((5000, 2)) * [1.0, 3.0] + [2.0, -1.0]
    chain = LatentChain(z, np.ones(5000, bool), np.zeros(5000))
    pushed = push_forward(chain, IdentityGenerator(2), None, batch=777)
    np.testing.assert_array_equal(pushed, np.hstack([z, z]))
    st_ = posterior_stats(pushed, 2, truth=[2.0, 20.0])
    np.testing.assert_allclose(st_.mean, z.mean(axis=0))
    np.testing.assert_allclose(st_.std, z.std(axis=0), rtol=1e-9)
    np.testing.assert_allclose(st_.response_std, z.std(axis=0), rtol=1e-9)
    assert st_.within_3sigma.tolist() == [True, False]
    assert st_.relative_error[0] == pytest.approx(abs(st_.mean[0] - 2.0) / 2.0)
    d = st_.as_dict()
    assert set(d) == {"mean", "std", "mean_sq", "truth", "relative_error", "within_3sigma"}


def test_constant_samples_give_finite_near_zero_std():
    # E[m^2] - E[m]^2 may round to a tiny negative number; the clamp keeps sqrt real
    for v in (0.1, 0.3, 1e3 / 3):
        st_ = posterior_stats(np.full((10, 2), v), 1)
        assert np.isfinite(st_.std[0]) and st_.std[0] <= 1e-6 * v


class ConstantGenerator:
    latent_dim = 2

    def __call__(self, z, coords):
        n = len(np.atleast_2d(z))
        return np.full((n, 1), 0.3), np.tile(np.arange(len(coords), dtype=float), (n, 1))


def test_log_posterior_hand_values():
    G = IdentityGenerator(1)
    assert log_posterior(np.zeros(1), Observation(np.zeros((1, 1)), [0.0], 1.0), G) == 0.0
    # residual 2 at z = 1 means the observation is 3
    assert log_posterior(np.ones(1), Observation(np.zeros((1, 1)), [3.0], 1.0), G) == -2.5
    vals = [log_posterior(np.ones(1), Observation(np.zeros((1, 1)), [1.0 + r], 1.0), G) for r in (0.5, 1.0, 2.0)]
    assert vals[0] > vals[1] > vals[2]


def test_map_of_zero_observation_is_origin():
    obs = Observation(np.zeros((2, 1)), np.zeros(2), 1.0)
    res = map_estimate(obs, IdentityGenerator(2), rng=np.random.default_rng(0))
    np.testing.assert_allclose(res.z, 0.0, atol=1e-3)
    assert res.starts.shape == (5, 2)


def test_map_returns_best_start():
    obs = Observation(np.zeros((1, 1)), [1.0], 1.0)
    res = map_estimate(obs, IdentityGenerator(1), iters=3, lr=0.01, starts=[[4.0], [0.6], [-3.0]])
    k = int(np.argmax(res.final_log_post))
    np.testing.assert_array_equal(res.z, res.finals[k])
    assert k == 1


def test_default_chain_length():
    chain = mh_sample(prior_only(1), IdentityGenerator(1), np.zeros(1), rng=np.random.default_rng(0))
    assert len(chain) == 5000 and len(chain.log_post) == 5000


def test_constant_generator_push_forward():
    z = np.random.default_rng(0).standard_normal((50, 2))
    pushed = push_forward(z, ConstantGenerator(), np.zeros((4, 2)))
    assert pushed.shape == (50, 1 + 4)
    assert np.all(pushed == pushed[0])


def test_identity_push_forward_moments_match_chain():
    z = np.random.default_rng(1).standard_normal((300, 2))
    pushed = push_forward(z, IdentityGenerator(2), None)
    np.testing.assert_allclose(pushed[:, :2].mean(axis=0), z.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(pushed[:, :2].std(axis=0), z.std(axis=0), atol=1e-12)


def test_two_point_chain_moments():
    s = posterior_stats(np.array([[1.0], [3.0]]), 1)
    assert (s.mean[0], s.mean_sq[0], s.std[0]) == (2.0, 5.0, 1.0)
    assert posterior_stats(np.full((5, 1), 2.0), 1).std[0] == 0.0
