"""Prediction of latent processes and responses at new coordinates.

Under the Gaussian/inverse-gamma prior each process is marginally
multivariate t, so given its values ``z_j`` at the ``n`` observed
coordinates the process at ``m`` new coordinates is

    t_m(nu + n, C' R^-1 z_j, (nu + z_j' R^-1 z_j) / (nu + n) (Rnew - C' R^-1 C)).

The scale matrix differs between posterior draws only through the scalar
Mahalanobis factor, so one factorization of ``Rnew - C' R^-1 C`` serves every
draw of a given process.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernel as kern
from .chol import Side, cholesky, tri_solve
from .errors import FactorizationError
from .expfam import Family, FamilySpec, ef_log_density

logger = logging.getLogger(__name__)

LOG_DENSITY_FLOOR = -740.0

__all__ = [
    "ConditionalT",
    "cond_t_params",
    "sample_cond_t",
    "predict_latent",
    "predict_response",
    "pointwise_pred_density",
    "LOG_DENSITY_FLOOR",
]


@dataclass(frozen=True)
class ConditionalT:
    """Multivariate t with upper-triangular scale factor ``U`` (scale ``U'U``)."""

    df: float
    location: np.ndarray
    scale_factor: np.ndarray

    @property
    def scale(self):
        return self.scale_factor.T @ self.scale_factor


def _residual_factor(W, R_tilde, events=None):
    base = np.asarray(R_tilde, dtype=float) - W.T @ W
    base = 0.5 * (base + base.T)
    try:
        return cholesky(base)
    except FactorizationError as exc:
        try:
            U = cholesky(base + kern.JITTER * np.eye(len(base)))
        except FactorizationError:
            raise FactorizationError(
                f"conditional scale matrix is indefinite; smallest pivot index {exc.pivot}, "
                f"min diagonal {np.diag(base).min():.3e}",
                pivot=exc.pivot,
            ) from exc
        if events is not None:
            events.append({"jitter": kern.JITTER, "size": len(base), "where": "conditional scale"})
        return U


def cond_t_params(z_j, R_factor, C_j, R_tilde, nu) -> ConditionalT:
    """Conditional t law of a process at new coordinates given its observed values.

    Parameters
    ----------
    z_j : ndarray, shape (n,)
    R_factor : ndarray, shape (n, n)
        Upper factor of the observed correlation matrix.
    C_j : ndarray, shape (n, m)
        Cross correlations observed x new.
    R_tilde : ndarray, shape (m, m)
        Correlations among the new coordinates.
    nu : float
        Prior degrees of freedom of the process.
    """
    z_j = np.asarray(z_j, dtype=float)
    n = len(z_j)
    W = tri_solve(R_factor, C_j, Side.UPPER_TRANSPOSE)
    a = tri_solve(R_factor, z_j, Side.UPPER_TRANSPOSE)
    maha = float(a @ a)
    df = nu + n
    U = _residual_factor(W, R_tilde)
    return ConditionalT(df, W.T @ a, np.sqrt((nu + maha) / df) * U)


def sample_cond_t(params: ConditionalT, rng, size=None):
    """Draw ``location + U' e / sqrt(chi2_df / df)``; ``size`` adds a leading axis."""
    m = len(params.location)
    count = 1 if size is None else int(size)
    e = rng.standard_normal((count, m)) @ params.scale_factor
    w = np.sqrt(rng.chisquare(params.df, size=count) / params.df)
    out = params.location + e / w[:, None]
    return out[0] if size is None else out


def predict_latent(z, coords, new_coords, kernels, nu_z, rng, corr_factors=None, events=None):
    """One conditional-t draw of every process at ``new_coords`` per posterior draw.

    Parameters
    ----------
    z : ndarray, shape (S, n, r)
        Posterior draws of the processes at ``coords``.
    kernels : sequence of kernel params, length r
    nu_z : ndarray, shape (r,)
    corr_factors : sequence of ndarray, optional
        Upper factors of the observed correlation matrices.

    Returns
    -------
    ndarray, shape (S, m, r)
    """
    z = np.asarray(z, dtype=float)
    S, n, r = z.shape
    new_coords = kern.as_coords(new_coords)
    m = len(new_coords)
    out = np.empty((S, m, r))
    if m == 0:
        return out
    cache = {}
    for j in range(r):
        key = id(kernels[j]) if corr_factors is None else (id(kernels[j]), id(corr_factors[j]))
        if key not in cache:
            U = corr_factors[j] if corr_factors is not None else kern.corr_factor(kern.corr_matrix(coords, kernels[j]), events)
            C = kern.cross_corr_matrix(coords, new_coords, kernels[j])
            W = tri_solve(U, C, Side.UPPER_TRANSPOSE)
            Rt = kern.corr_matrix(new_coords, kernels[j])
            cache[key] = (U, W, _residual_factor(W, Rt, events))
        U, W, Ures = cache[key]
        A = tri_solve(U, z[:, :, j].T, Side.UPPER_TRANSPOSE)  # (n, S)
        maha = np.einsum("is,is->s", A, A)
        df = nu_z[j] + n
        loc = (W.T @ A).T  # (S, m)
        scale = np.sqrt((nu_z[j] + maha) / df)
        e = rng.standard_normal((S, m)) @ Ures
        w = np.sqrt(rng.chisquare(df, size=S) / df)
        out[:, :, j] = loc + (scale / w)[:, None] * e
    return out


def _natural_parameter(beta, ztilde, X_new, Xtilde_new):
    # beta (S, p), ztilde (S, m, r) -> (S, m)
    return beta @ np.asarray(X_new, dtype=float).T + np.einsum("smr,mr->sm", ztilde, np.asarray(Xtilde_new, dtype=float))


def predict_response(beta, ztilde, X_new, Xtilde_new, family, rng, trials=None):
    """Posterior predictive responses, one per draw: ``(S, m)`` integers.

    The natural parameter is ``x' beta + xt' ztilde``; ``xi`` and ``mu``
    contribute zero.
    """
    eta = _natural_parameter(beta, ztilde, X_new, Xtilde_new)
    kind = family.kind if isinstance(family, FamilySpec) else Family(family)
    if kind is Family.POISSON:
        return rng.poisson(np.exp(eta))
    if trials is None:
        trials = family.trials
    return rng.binomial(np.broadcast_to(trials, eta.shape), 1.0 / (1.0 + np.exp(-eta)))


def pointwise_pred_density(y_new, X_new, Xtilde_new, beta, ztilde, family, trials=None):
    """Monte-Carlo log predictive density at each new observation.

    ``log((1/S) sum_s EF(y | eta_s))`` evaluated with log-sum-exp, one value
    per new observation; nothing is floored here.

    Parameters
    ----------
    y_new : array_like, shape (m,)
    beta : ndarray, shape (S, p)
    ztilde : ndarray, shape (S, m, r)
    """
    eta = _natural_parameter(beta, ztilde, X_new, Xtilde_new)
    kind = family.kind if isinstance(family, FamilySpec) else Family(family)
    if trials is None:
        trials = family.trials if isinstance(family, FamilySpec) else 1
    logp = ef_log_density(np.asarray(y_new)[None, :], eta, trials, kind)
    return logsumexp(logp, axis=0) - np.log(eta.shape[0])
