"""Exponential-family likelihoods and Diaconis-Ylvisaker (DY) conjugate draws.

Two response families are supported, Poisson (unit log partition
``exp(t)``) and binomial (``log(1 + exp(t))``).  Their DY conjugates are the
log-gamma and logit-beta distributions; both are sampled exactly through
gamma variates.  A Gaussian member is provided for API uniformity only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import DomainError, ParameterError

__all__ = [
    "Family",
    "FamilySpec",
    "Psi",
    "DyParams",
    "ef_log_density",
    "dy_sample",
    "dy_log_density",
    "log_gamma_variate",
]


class Family(str, enum.Enum):
    POISSON = "poisson"
    BINOMIAL = "binomial"


class Psi(str, enum.Enum):
    """Unit log partition functions indexing the DY family."""

    GAUSSIAN = "gaussian"  # t**2
    LOG_GAMMA = "log_gamma"  # exp(t)
    LOGIT_BETA = "logit_beta"  # log(1 + exp(t))


@dataclass(frozen=True)
class FamilySpec:
    """Response family together with the per-observation trial counts ``b``.

    Parameters
    ----------
    kind : Family or str
    trials : array_like of int, optional
        Number of trials per observation.  Ignored (forced to ones) for
        Poisson; required for binomial.
    n : int, optional
        Observation count, used to build the all-ones vector for Poisson when
        ``trials`` is omitted.
    """

    kind: Family
    trials: np.ndarray = field(repr=False)

    def __init__(self, kind, trials=None, n=None):
        kind = Family(kind)
        if kind is Family.POISSON:
            if trials is not None:
                n = len(np.atleast_1d(trials))
            if n is None:
                raise ParameterError("Poisson FamilySpec needs trials or n")
            trials = np.ones(int(n), dtype=np.int64)
        else:
            if trials is None:
                raise ParameterError("binomial FamilySpec requires trial counts")
            trials = np.atleast_1d(np.asarray(trials))
            if not np.all(trials == np.round(trials)):
                raise ParameterError("binomial trials must be integers")
            trials = trials.astype(np.int64)
            bad = np.flatnonzero(trials < 1)
            if bad.size:
                raise ParameterError(
                    f"binomial trials must be >= 1 (observation {bad[0]} has {trials[bad[0]]})"
                )
        trials.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "trials", trials)

    @property
    def psi(self) -> Psi:
        return Psi.LOG_GAMMA if self.kind is Family.POISSON else Psi.LOGIT_BETA

    @property
    def kappa_eps_ratio(self) -> float:
        """``kappa_eps / alpha_eps`` implied by the family (0 or 2)."""
        return 0.0 if self.kind is Family.POISSON else 2.0

    def __len__(self):
        return len(self.trials)

    def subset(self, idx) -> "FamilySpec":
        return FamilySpec(self.kind, trials=self.trials[idx])


def _as_family(family) -> Family:
    return family.kind if isinstance(family, FamilySpec) else Family(family)


def ef_log_density(y, eta, trials=1, family=Family.POISSON):
    """Normalised log-likelihood of counts ``y`` given natural parameter ``eta``.

    Poisson uses mean ``exp(eta)``; binomial uses ``trials`` trials with
    success probability ``ilogit(eta)``.  All arguments broadcast.

    Raises
    ------
    DomainError
        If ``eta`` is not finite, ``y`` is negative, or ``y > trials`` for the
        binomial family.
    """
    kind = _as_family(family)
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise DomainError("natural parameter must be finite")
    if np.any(y < 0):
        raise DomainError("counts must be non-negative")
    if kind is Family.POISSON:
        return y * eta - np.exp(eta) - special.gammaln(y + 1.0)
    b = np.asarray(trials, dtype=float)
    if np.any(y > b):
        raise DomainError("binomial count exceeds number of trials")
    log_choose = special.gammaln(b + 1.0) - special.gammaln(y + 1.0) - special.gammaln(b - y + 1.0)
    return y * eta - b * np.logaddexp(0.0, eta) + log_choose


@dataclass(frozen=True)
class DyParams:
    """Shape ``alpha``, scale ``kappa`` and log partition ``psi`` of a DY law.

    ``alpha`` and ``kappa`` may be arrays (one entry per independent variate);
    the admissible region is checked elementwise and the first offending index
    is reported.
    """

    alpha: np.ndarray
    kappa: np.ndarray
    psi: Psi

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        kappa = np.asarray(self.kappa, dtype=float)
        psi = Psi(self.psi)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "psi", psi)
        a, k = np.broadcast_arrays(alpha, kappa)
        checks = [(~(k > 0), "kappa > 0")]
        if psi is Psi.LOG_GAMMA:
            checks.append((~(a > 0), "alpha > 0"))
        elif psi is Psi.LOGIT_BETA:
            checks.append((~(a > 0), "alpha > 0"))
            checks.append((~(k - a > 0), "kappa - alpha > 0"))
        for bad, rule in checks:
            if np.any(bad):
                i = int(np.flatnonzero(bad.ravel())[0])
                raise ParameterError(
                    f"DY({psi.value}) requires {rule}; violated at index {i} "
                    f"(alpha={a.ravel()[i]!r}, kappa={k.ravel()[i]!r})"
                )


def log_gamma_variate(shape, rng, size=None):
    """``log G`` for ``G ~ Gamma(shape, rate=1)``, safe for tiny shapes.

    For ``shape < 1`` the boost identity ``G = G' * U**(1/shape)`` with
    ``G' ~ Gamma(shape + 1)`` is applied on the log scale, so the result stays
    finite even when ``G`` itself would underflow to zero.
    """
    shape = np.asarray(shape, dtype=float)
    if size is None:
        size = shape.shape
    shape = np.broadcast_to(shape, size)
    small = shape < 1.0
    g = rng.standard_gamma(np.where(small, shape + 1.0, shape), size=size)
    out = np.log(g)
    if np.any(small):
        u = rng.random(size=size)
        # log1p(-u) has the same law as log(u) and avoids log(0)
        out = np.where(small, out + np.log1p(-u) / shape, out)
    return out


def dy_sample(params: DyParams, rng, size=None):
    """Exact draw from ``DY(alpha, kappa; psi)``.

    * log-gamma: ``log G`` with ``G ~ Gamma(alpha, rate=kappa)``
    * logit-beta: ``logit B`` with ``B ~ Beta(alpha, kappa - alpha)``, computed
      as a difference of log-gamma variates
    * Gaussian (``psi(t) = t**2``): ``Normal(alpha / (2 kappa), 1 / (2 kappa))``
    """
    alpha, kappa = params.alpha, params.kappa
    if size is None:
        size = np.broadcast_shapes(alpha.shape, kappa.shape)
    if params.psi is Psi.LOG_GAMMA:
        return log_gamma_variate(alpha, rng, size) - np.log(kappa)
    if params.psi is Psi.LOGIT_BETA:
        return log_gamma_variate(alpha, rng, size) - log_gamma_variate(kappa - alpha, rng, size)
    return alpha / (2.0 * kappa) + rng.standard_normal(size) / np.sqrt(2.0 * kappa)


def dy_log_density(params: DyParams, eta):
    """Normalised log density of ``DY(alpha, kappa; psi)`` at ``eta``."""
    alpha, kappa = params.alpha, params.kappa
    eta = np.asarray(eta, dtype=float)
    if params.psi is Psi.LOG_GAMMA:
        return alpha * eta - kappa * np.exp(eta) + alpha * np.log(kappa) - special.gammaln(alpha)
    if params.psi is Psi.LOGIT_BETA:
        return alpha * eta - kappa * np.logaddexp(0.0, eta) - special.betaln(alpha, kappa - alpha)
    var = 1.0 / (2.0 * kappa)
    return stats.norm.logpdf(eta, loc=alpha * var, scale=np.sqrt(var))
