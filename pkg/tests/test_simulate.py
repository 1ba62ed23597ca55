"""Synthetic data generation."""

import numpy as np
import pytest

from stvcstack.errors import ConfigError
from stvcstack.kernel import SpaceTimeKernel, corr_matrix
from stvcstack.simulate import (
    SimConfig,
    gp_sample,
    matern_spatial_config,
    binomial_design_config,
    poisson_design_config,
    simulate_dataset,
)


class TestGpSample:
    def test_zero_variance(self, rng):
        assert not gp_sample(rng.random((4, 3)), 0.0, SpaceTimeKernel(1, 1), rng).any()

    def test_covariance(self, rng):
        coords = rng.random((5, 3))
        k = SpaceTimeKernel(0.5, 2.0)
        draws = np.array([gp_sample(coords, 0.5, k, rng) for _ in range(10_000)])
        np.testing.assert_allclose(np.cov(draws.T), 0.5 * corr_matrix(coords, k), atol=0.04)

    def test_independence_limit(self, rng):
        coords = rng.random((5, 3))
        draws = np.array([gp_sample(coords, 1.0, SpaceTimeKernel(1.0, 1e6), rng) for _ in range(10_000)])
        C = np.corrcoef(draws.T)
        assert np.abs(C[~np.eye(5, dtype=bool)]).max() < 0.05


class TestConfigs:
    def test_poisson_design(self):
        c = poisson_design_config()
        assert c.beta == (5.0, -0.5) and c.sigma2_z == (0.25, 0.5)
        assert c.kernels == (SpaceTimeKernel(0.5, 2.0), SpaceTimeKernel(1.0, 4.0))
        assert (c.n, c.holdout) == (200, 100)

    def test_binomial_design(self):
        c = binomial_design_config()
        assert c.beta == (1.0, -0.5) and c.trials_mean == 20.0

    def test_bad_lengths(self):
        with pytest.raises(ConfigError):
            SimConfig(10, 0, "poisson", (1.0, 0.0), (0.1,), (SpaceTimeKernel(1, 1),) * 2)


class TestSimulateDataset:
    def test_sizes_and_disjoint(self):
        train, hold, truth = simulate_dataset(poisson_design_config(seed=1))
        assert train.n == 200 and hold.n == 100
        a = {tuple(c) for c in train.coords}
        assert not a & {tuple(c) for c in hold.coords}
        assert len(truth["z"]) == 300 and truth["beta"] == [5.0, -0.5]

    def test_few_zeros(self):
        for seed in range(3):
            train, _, _ = simulate_dataset(poisson_design_config(seed=seed))
            assert np.mean(train.y == 0) < 0.05

    def test_binomial_trials_positive(self):
        train, hold, _ = simulate_dataset(binomial_design_config(seed=2))
        assert train.family.trials.min() >= 1 and np.all(train.y <= train.family.trials)
        assert 17 < train.family.trials.mean() < 23

    def test_deterministic(self):
        a = simulate_dataset(binomial_design_config(n=50, holdout=10, seed=4))
        b = simulate_dataset(binomial_design_config(n=50, holdout=10, seed=4))
        np.testing.assert_array_equal(a[0].y, b[0].y)
        np.testing.assert_array_equal(a[1].coords, b[1].coords)

    def test_no_holdout(self):
        train, hold, truth = simulate_dataset(poisson_design_config(n=30, holdout=0))
        assert hold is None and truth["holdout_rows"] == []

    def test_spatial_only(self):
        train, _, _ = simulate_dataset(matern_spatial_config(n=50))
        assert np.all(train.coords[:, 2] == 0) and train.r == 1
