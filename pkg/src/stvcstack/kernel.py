"""Correlation functions over space-time coordinates.

Coordinates are stored as float arrays of shape ``(n, 3)`` with columns
``(s1, s2, t)``.  The Matérn kernel is purely spatial and ignores ``t``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import optimize, special
from scipy.spatial.distance import cdist

from .errors import ConfigError, FactorizationError

logger = logging.getLogger(__name__)

JITTER = 1e-10
EFFECTIVE_RANGE_CORR = 0.05

__all__ = [
    "SpaceTimeKernel",
    "MaternKernel",
    "KernelParams",
    "as_coords",
    "corr",
    "corr_matrix",
    "cross_corr_matrix",
    "corr_factor",
    "decay_for_effective_range",
    "effective_range_grid",
]


@dataclass(frozen=True)
class SpaceTimeKernel:
    """Non-separable space-time correlation.

    ``R = exp(-phi2 * |s - s'| / sqrt(1 + phi1 dt**2)) / (1 + phi1 dt**2)``
    with temporal decay ``phi1`` and spatial decay ``phi2``.
    """

    phi1: float
    phi2: float

    def __post_init__(self):
        if not (self.phi1 > 0 and self.phi2 > 0):
            raise ConfigError(f"decay parameters must be positive, got {self}")

    def from_distances(self, ds, dt):
        a = self.phi1 * np.square(dt) + 1.0
        return np.exp(-self.phi2 * ds / np.sqrt(a)) / a


@dataclass(frozen=True)
class MaternKernel:
    """Spatial Matérn correlation with decay ``phi`` and smoothness ``nu``."""

    phi: float
    nu: float

    def __post_init__(self):
        if not (self.phi > 0 and self.nu > 0):
            raise ConfigError(f"Matern parameters must be positive, got {self}")

    def from_distances(self, ds, dt=None):
        u = self.phi * np.asarray(ds, dtype=float)
        if self.nu == 0.5:
            return np.exp(-u)
        with np.errstate(invalid="ignore"):
            val = (2.0 ** (1.0 - self.nu) / special.gamma(self.nu)) * u**self.nu * special.kv(self.nu, u)
        return np.where(u > 0, val, 1.0)


KernelParams = Union[SpaceTimeKernel, MaternKernel]


def as_coords(coords) -> np.ndarray:
    """Validate and return coordinates as a float ``(n, 3)`` array.

    ``(n, 2)`` input is treated as purely spatial with ``t = 0``.
    """
    c = np.asarray(coords, dtype=float)
    if c.ndim == 1:
        c = c[None, :]
    if c.ndim != 2 or c.shape[1] not in (2, 3):
        raise ConfigError(f"coordinates must have shape (n, 2) or (n, 3), got {c.shape}")
    if c.shape[1] == 2:
        c = np.column_stack([c, np.zeros(len(c))])
    if not np.all(np.isfinite(c)):
        raise ConfigError("coordinates must be finite")
    return c


def corr(a, b, params: KernelParams) -> float:
    """Correlation between two coordinates."""
    a, b = as_coords(a)[0], as_coords(b)[0]
    ds = np.hypot(a[0] - b[0], a[1] - b[1])
    return float(params.from_distances(ds, a[2] - b[2]))


def _distances(c1, c2):
    ds = cdist(c1[:, :2], c2[:, :2])
    dt = c1[:, 2][:, None] - c2[:, 2][None, :]
    return ds, dt


def corr_matrix(coords, params: KernelParams) -> np.ndarray:
    """Correlation matrix over distinct coordinates.

    The upper triangle is evaluated and mirrored, so the result is exactly
    symmetric.
    """
    c = as_coords(coords)
    n = len(c)
    if len(np.unique(c, axis=0)) != n:
        raise ConfigError("duplicate coordinates make the correlation matrix singular")
    ds, dt = _distances(c, c)
    R = params.from_distances(ds, dt)
    iu = np.triu_indices(n, 1)
    R[(iu[1], iu[0])] = R[iu]
    np.fill_diagonal(R, 1.0)
    return R


def cross_corr_matrix(coords, new_coords, params: KernelParams) -> np.ndarray:
    """``(n, m)`` matrix of correlations between two coordinate sets."""
    ds, dt = _distances(as_coords(coords), as_coords(new_coords))
    return params.from_distances(ds, dt)


def corr_factor(R, events=None):
    """Upper Cholesky factor of a correlation matrix with jitter fallback.

    The plain factorization is tried first; on failure ``JITTER`` is added to
    the diagonal once.  Jitter use is logged and, when ``events`` is a list,
    appended to it.
    """
    from .chol import cholesky

    try:
        return cholesky(R)
    except FactorizationError:
        U = cholesky(R + JITTER * np.eye(len(R)))
        logger.warning("added %.1e jitter to a %d x %d correlation matrix", JITTER, len(R), len(R))
        if events is not None:
            events.append({"jitter": JITTER, "size": len(R)})
        return U


def decay_for_effective_range(distance, kind="spatial", nu=0.5, tol=1e-8):
    """Decay parameter at which correlation falls to 0.05 at ``distance``.

    Parameters
    ----------
    distance : float
        Target effective range (spatial distance or time gap).
    kind : {"spatial", "temporal", "matern"}
        ``"spatial"`` solves for ``phi2`` of the space-time kernel at zero time
        gap, ``"temporal"`` for ``phi1`` at zero spatial distance and
        ``"matern"`` for the Matérn ``phi`` at smoothness ``nu``.
    """
    if not distance > 0:
        raise ConfigError("effective range must be positive")

    if kind == "spatial":
        f = lambda phi: SpaceTimeKernel(1.0, phi).from_distances(distance, 0.0)
    elif kind == "temporal":
        f = lambda phi: SpaceTimeKernel(phi, 1.0).from_distances(0.0, distance)
    elif kind == "matern":
        f = lambda phi: MaternKernel(phi, nu).from_distances(distance)
    else:
        raise ConfigError(f"unknown effective-range kind {kind!r}")

    g = lambda phi: float(f(phi)) - EFFECTIVE_RANGE_CORR
    lo, hi = 1e-12, 1.0
    while g(hi) > 0:
        hi *= 2.0
    return optimize.bisect(g, lo, hi, xtol=tol, maxiter=500)


def effective_range_grid(coords, fractions=(0.2, 0.5, 0.7)):
    """Decay grids whose effective ranges are fractions of the maximal spans.

    Returns
    -------
    phi1, phi2 : list of float
        Temporal and spatial decay values, one per fraction.
    """
    c = as_coords(coords)
    max_ds = cdist(c[:, :2], c[:, :2]).max()
    max_dt = np.ptp(c[:, 2])
    phi2 = [decay_for_effective_range(f * max_ds, "spatial") for f in fractions]
    phi1 = [decay_for_effective_range(f * max_dt, "temporal") for f in fractions] if max_dt > 0 else []
    return phi1, phi2
