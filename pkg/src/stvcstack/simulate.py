"""Synthetic spatial-temporal count data with varying coefficients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernel as kern
from .errors import ConfigError
from .expfam import Family, FamilySpec
from .model import Dataset

__all__ = [
    "SimConfig",
    "gp_sample",
    "simulate_dataset",
    "poisson_design_config",
    "binomial_design_config",
    "matern_spatial_config",
]


@dataclass
class SimConfig:
    """Simulation settings.

    ``n`` training observations plus ``holdout`` held-out ones are generated
    at coordinates uniform on the unit cube; ``x = (1, N(0, 1))`` and every
    column listed in ``varying`` carries an independent GP coefficient.
    ``spatial_only`` fixes ``t = 0``.
    """

    n: int
    holdout: int
    family: str
    beta: tuple
    sigma2_z: tuple
    kernels: tuple
    seed: int = 0
    varying: Optional[tuple] = None
    trials_mean: float = 20.0
    spatial_only: bool = False

    def __post_init__(self):
        self.family = Family(self.family)
        if self.n < 1 or self.holdout < 0:
            raise ConfigError("need n >= 1 and holdout >= 0")
        if self.varying is None:
            self.varying = tuple(range(len(self.beta)))
        if len(self.sigma2_z) != len(self.varying) or len(self.kernels) != len(self.varying):
            raise ConfigError("one variance and one kernel per varying coefficient")
        if any(s < 0 for s in self.sigma2_z):
            raise ConfigError("variances must be non-negative")


def gp_sample(coords, sigma2, kernel, rng):
    """One draw of a zero-mean GP with covariance ``sigma2 * R``."""
    coords = kern.as_coords(coords)
    if sigma2 == 0:
        return np.zeros(len(coords))
    U = kern.corr_factor(kern.corr_matrix(coords, kernel))
    return np.sqrt(sigma2) * (U.T @ rng.standard_normal(len(coords)))


def simulate_dataset(config: SimConfig):
    """Generate training data, holdout data and the truth record.

    Returns
    -------
    train : Dataset
    holdout : Dataset or None
    truth : dict
        ``beta``, ``z`` (``(n_total, r)``), ``eta``, the kernels and the
        indices of the holdout rows within the generated sample.
    """
    rng = np.random.default_rng(config.seed)
    total = config.n + config.holdout
    p = len(config.beta)
    coords = rng.random((total, 3))
    if config.spatial_only:
        coords[:, 2] = 0.0
    X = np.column_stack([np.ones(total)] + [rng.standard_normal(total) for _ in range(p - 1)])
    z = np.column_stack(
        [gp_sample(coords, s2, k, rng) for s2, k in zip(config.sigma2_z, config.kernels)]
    )
    beta = np.asarray(config.beta, dtype=float)
    eta = X @ beta + np.sum(X[:, list(config.varying)] * z, axis=1)
    if config.family is Family.POISSON:
        trials = np.ones(total, dtype=np.int64)
        y = rng.poisson(np.exp(eta))
    else:
        trials = rng.poisson(config.trials_mean, size=total)
        while np.any(trials == 0):
            zero = trials == 0
            trials[zero] = rng.poisson(config.trials_mean, size=zero.sum())
        y = rng.binomial(trials, 1.0 / (1.0 + np.exp(-eta)))

    hold = np.sort(rng.choice(total, size=config.holdout, replace=False))
    train_idx = np.setdiff1d(np.arange(total), hold)
    names = ("intercept",) + tuple(f"x{j}" for j in range(1, p))

    def make(idx):
        fam = FamilySpec(config.family, trials=trials[idx])
        return Dataset(coords[idx], y[idx], fam, X[idx], config.varying, names)

    truth = {
        "beta": beta.tolist(),
        "sigma2_z": list(config.sigma2_z),
        "kernels": [{"type": type(k).__name__, **vars(k)} for k in config.kernels],
        "varying": list(config.varying),
        "z": z.tolist(),
        "eta": eta.tolist(),
        "holdout_rows": hold.tolist(),
        "train_rows": train_idx.tolist(),
        "seed": config.seed,
    }
    return make(train_idx), (make(hold) if config.holdout else None), truth


_DESIGN_KERNELS = (kern.SpaceTimeKernel(0.5, 2.0), kern.SpaceTimeKernel(1.0, 4.0))


def poisson_design_config(n=200, holdout=100, seed=0) -> SimConfig:
    """Poisson design: beta = (5, -0.5), both coefficients varying."""
    return SimConfig(n, holdout, "poisson", (5.0, -0.5), (0.25, 0.5), _DESIGN_KERNELS, seed)


def binomial_design_config(n=200, holdout=100, seed=0) -> SimConfig:
    """Binomial design: beta = (1, -0.5), trials ~ Poisson(20) (zeros redrawn)."""
    return SimConfig(n, holdout, "binomial", (1.0, -0.5), (0.25, 0.5), _DESIGN_KERNELS, seed)


def matern_spatial_config(n=1000, holdout=0, seed=0) -> SimConfig:
    """Spatial-only Poisson design with a Matérn(phi=3.5, nu=0.5) intercept process."""
    return SimConfig(
        n, holdout, "poisson", (5.0, -0.5), (0.4,), (kern.MaternKernel(3.5, 0.5),), seed,
        varying=(0,), spatial_only=True,
    )
