"""Spatially-temporally varying coefficient GLM with exact conjugate sampling.

For a candidate model with fixed boundary adjustment ``alpha_eps``, noise
scale ``sigma_xi`` and kernel parameters, the conditional posterior of
``gamma = (xi, beta, z)`` is sampled exactly by drawing an auxiliary vector
``(v_eta, v_xi, v_beta, v_z)`` and solving

    (H1.T H1 + I) gamma = H1.T v_eta + (v_xi, v_beta, v_z),
    H1 = [I_n : X : Xtilde],

where ``Xtilde = [diag(xt_1) : ... : diag(xt_r)]``.

``z`` is held as an ``(n, r)`` array whose column ``j`` is the process
``z_j``; flattening that array in C order gives the location-major vector
used inside :func:`project`, flattening its transpose gives the
process-major vector ``(z_1, ..., z_r)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve

from . import kernel as kern
from .expfam import DyParams, Family, FamilySpec, dy_sample
from .errors import ConfigError, ParameterError

__all__ = [
    "Dataset",
    "CandidateModel",
    "Hyperparams",
    "PosteriorDraw",
    "PosteriorSample",
    "AuxVector",
    "ProjectionCache",
    "make_candidate",
    "draw_aux_vector",
    "project",
    "project_naive",
    "posterior_sample",
    "to_location_major",
    "to_process_major",
]


@dataclass(frozen=True)
class Dataset:
    """Observed data for one fit.

    Parameters
    ----------
    coords : ndarray, shape (n, 3)
        ``(s1, s2, t)`` per observation.
    y : ndarray of int, shape (n,)
    family : FamilySpec
    X : ndarray, shape (n, p)
        Fixed-effect design.
    varying : sequence of int
        Columns of ``X`` that also receive spatially-temporally varying
        coefficients (``r`` of them).
    names : sequence of str, optional
        Column names of ``X``.
    """

    coords: np.ndarray
    y: np.ndarray
    family: FamilySpec
    X: np.ndarray
    varying: tuple
    names: Optional[tuple] = None

    def __post_init__(self):
        coords = kern.as_coords(self.coords)
        y = np.asarray(self.y)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = len(coords)
        if y.shape != (n,) or X.shape[0] != n or len(self.family) != n:
            raise ConfigError(
                f"inconsistent sizes: coords {n}, y {y.shape}, X {X.shape}, trials {len(self.family)}"
            )
        if not np.all(y == np.round(y)) or np.any(y < 0):
            raise ConfigError("responses must be non-negative integers")
        if self.family.kind is Family.BINOMIAL and np.any(y > self.family.trials):
            i = int(np.flatnonzero(y > self.family.trials)[0])
            raise ConfigError(f"observation {i}: y={y[i]} exceeds trials={self.family.trials[i]}")
        varying = tuple(int(j) for j in self.varying)
        if len(varying) < 1:
            raise ConfigError("at least one varying coefficient is required")
        if any(j < 0 or j >= X.shape[1] for j in varying):
            raise ConfigError(f"varying columns {varying} out of range for p={X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ConfigError("design matrix must be finite")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "y", y.astype(np.int64))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "varying", varying)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def r(self) -> int:
        return len(self.varying)

    @property
    def Xtilde(self) -> np.ndarray:
        """``(n, r)`` predictors carrying varying coefficients."""
        return self.X[:, list(self.varying)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.coords[idx], self.y[idx], self.family.subset(idx), self.X[idx], self.varying, self.names)


@dataclass(frozen=True)
class CandidateModel:
    """One fixed ``(alpha_eps, kappa_eps, sigma_xi, kernel)`` configuration.

    ``kernel`` is either one kernel shared by all varying coefficients (the
    reduced model) or a tuple with one kernel per coefficient.
    """

    alpha_eps: float
    kappa_eps: float
    sigma_xi: float
    kernel: object

    def __post_init__(self):
        if not self.alpha_eps > 0:
            raise ConfigError("alpha_eps must be positive")
        if not self.kappa_eps >= 0:
            raise ConfigError("kappa_eps must be non-negative")
        if not self.sigma_xi > 0:
            raise ConfigError("sigma_xi must be positive")

    def kernels(self, r) -> tuple:
        if isinstance(self.kernel, (tuple, list)):
            if len(self.kernel) != r:
                raise ConfigError(f"{len(self.kernel)} kernels given for {r} varying coefficients")
            return tuple(self.kernel)
        return (self.kernel,) * r

    @property
    def shared_kernel(self) -> bool:
        return not isinstance(self.kernel, (tuple, list))

    def describe(self) -> dict:
        def kdict(k):
            return {"type": type(k).__name__, **vars(k)}

        kern_desc = [kdict(k) for k in self.kernel] if not self.shared_kernel else kdict(self.kernel)
        return {
            "alpha_eps": self.alpha_eps,
            "kappa_eps": self.kappa_eps,
            "sigma_xi": self.sigma_xi,
            "kernel": kern_desc,
        }


def make_candidate(alpha_eps, sigma_xi, kernel, family) -> CandidateModel:
    """Candidate model with ``kappa_eps`` set by the family (0 or 2 alpha_eps)."""
    kind = family.kind if isinstance(family, FamilySpec) else Family(family)
    ratio = 0.0 if kind is Family.POISSON else 2.0
    return CandidateModel(float(alpha_eps), ratio * float(alpha_eps), float(sigma_xi), kernel)


@dataclass(frozen=True)
class Hyperparams:
    """Degrees of freedom of the inverse-gamma priors on the variances."""

    nu_beta: float = 3.0
    nu_z: object = 3.0

    def __post_init__(self):
        if not self.nu_beta > 0 or not np.all(np.asarray(self.nu_z) > 0):
            raise ConfigError("degrees of freedom must be positive")

    def nu_z_vector(self, r) -> np.ndarray:
        nu = np.broadcast_to(np.asarray(self.nu_z, dtype=float), (r,)).copy()
        return nu


@dataclass
class PosteriorDraw:
    """A single joint draw; ``z`` has shape ``(n, r)``."""

    beta: np.ndarray
    z: np.ndarray
    xi: np.ndarray
    sigma2_beta: float
    sigma2_z: np.ndarray
    eta: np.ndarray


@dataclass
class PosteriorSample:
    """``N`` draws stacked along the leading axis.

    Shapes: ``beta (N, p)``, ``z (N, n, r)``, ``xi (N, n)``,
    ``sigma2_beta (N,)``, ``sigma2_z (N, r)``, ``eta (N, n)``.
    """

    beta: np.ndarray
    z: np.ndarray
    xi: np.ndarray
    sigma2_beta: np.ndarray
    sigma2_z: np.ndarray
    eta: np.ndarray

    def __len__(self):
        return len(self.beta)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return PosteriorDraw(
                self.beta[i], self.z[i], self.xi[i], float(self.sigma2_beta[i]), self.sigma2_z[i], self.eta[i]
            )
        return PosteriorSample(
            self.beta[i], self.z[i], self.xi[i], self.sigma2_beta[i], self.sigma2_z[i], self.eta[i]
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def concatenate(cls, samples: Sequence["PosteriorSample"]) -> "PosteriorSample":
        return cls(*(np.concatenate([getattr(s, f) for s in samples]) for f in cls.__dataclass_fields__))


def to_location_major(z_process_major, n, r):
    """``(z_1, ..., z_r)`` stacked vector -> ``(z_(1), ..., z_(n))``."""
    z = np.asarray(z_process_major)
    lead = z.shape[:-1]
    return np.swapaxes(z.reshape(*lead, r, n), -1, -2).reshape(*lead, n * r)


def to_process_major(z_location_major, n, r):
    """Inverse of :func:`to_location_major`."""
    z = np.asarray(z_location_major)
    lead = z.shape[:-1]
    return np.swapaxes(z.reshape(*lead, n, r), -1, -2).reshape(*lead, n * r)


class ProjectionCache:
    """Design-only quantities reused by every projection.

    Holds the per-location ``r x r`` Cholesky factors of ``xt_i xt_i' + I``
    (and the inverses they imply), the squared norms ``|xt_i|^2`` and the
    ``p x p`` factor of ``I + X' diag(1 / (2 + |xt_i|^2)) X``.
    """

    def __init__(self, X, Xtilde):
        X = np.asarray(X, dtype=float)
        Xt = np.asarray(Xtilde, dtype=float)
        if Xt.ndim == 1:
            Xt = Xt[:, None]
        n, r = Xt.shape
        self.X, self.Xtilde = X, Xt
        self.sq = np.einsum("ij,ij->i", Xt, Xt)
        outer = Xt[:, :, None] * Xt[:, None, :] + np.eye(r)
        self.D = np.linalg.cholesky(outer)  # lower, D D' = xt xt' + I
        Dinv = np.linalg.inv(self.D)
        self.Dinv_full = np.swapaxes(Dinv, 1, 2) @ Dinv
        self.w2 = 1.0 / (2.0 + self.sq)
        S = np.eye(X.shape[1]) + X.T @ (self.w2[:, None] * X)
        self.Dstar = np.linalg.cholesky(S)

    @property
    def shape(self):
        return self.X.shape[0], self.X.shape[1], self.Xtilde.shape[1]


def project(X, Xtilde, v_eta, v_xi, v_beta, v_z, cache: Optional[ProjectionCache] = None):
    """Exact posterior draw of ``(xi, beta, z)`` from an auxiliary vector.

    Linear cost in ``n``: only ``r x r`` blocks and one ``p x p`` system are
    factorized.  Inputs may carry a leading batch axis.

    Parameters
    ----------
    X : ndarray, shape (n, p)
    Xtilde : ndarray, shape (n, r)
    v_eta, v_xi : ndarray, shape (..., n)
    v_beta : ndarray, shape (..., p)
    v_z : ndarray, shape (..., n, r)
        Column ``j`` is the auxiliary draw for process ``j``.
    cache : ProjectionCache, optional

    Returns
    -------
    xi : ndarray, shape (..., n)
    beta : ndarray, shape (..., p)
    z : ndarray, shape (..., n, r)
    """
    if cache is None:
        cache = ProjectionCache(X, Xtilde)
    n, p, r = cache.shape
    X, Xt = cache.X, cache.Xtilde
    v_eta = np.asarray(v_eta, dtype=float)
    v_z = np.asarray(v_z, dtype=float)
    if v_eta.shape[-1] != n or v_z.shape[-2:] != (n, r) or np.shape(v_beta)[-1] != p:
        raise ConfigError("auxiliary vector shapes do not match the design")

    a = Xt * v_eta[..., None] + v_z
    a = np.einsum("ijk,...ik->...ij", cache.Dinv_full, a)  # block solves
    v2 = v_eta - np.einsum("ij,...ij->...i", Xt, a)
    v3 = v2 @ X + v_beta
    v2 = v2 + v_xi
    v3 = (v2 * cache.w2) @ X - v3
    beta = -cho_solve((cache.Dstar, True), v3.reshape(-1, p).T).T.reshape(v3.shape)
    Xb = beta @ X.T
    xi = (1.0 - cache.w2) * v2 - cache.w2 * Xb
    t = xi + Xb
    z = a - (Xt / (1.0 + cache.sq)[:, None]) * t[..., None]
    return xi, beta, z


def project_naive(X, Xtilde, v_eta, v_xi, v_beta, v_z):
    """Dense reference for :func:`project` (single draw, cubic cost)."""
    X = np.asarray(X, dtype=float)
    Xt = np.asarray(Xtilde, dtype=float)
    if Xt.ndim == 1:
        Xt = Xt[:, None]
    n, p = X.shape
    r = Xt.shape[1]
    Xbig = np.hstack([np.diag(Xt[:, j]) for j in range(r)])  # process-major columns
    H1 = np.hstack([np.eye(n), X, Xbig])
    v_gamma = np.concatenate([v_xi, v_beta, np.asarray(v_z).T.ravel()])
    lhs = H1.T @ H1 + np.eye(H1.shape[1])
    gamma = np.linalg.solve(lhs, H1.T @ np.asarray(v_eta) + v_gamma)
    return gamma[:n], gamma[n : n + p], gamma[n + p :].reshape(r, n).T


@dataclass
class AuxVector:
    v_eta: np.ndarray
    v_xi: np.ndarray
    v_beta: np.ndarray
    v_z: np.ndarray
    sigma2_beta: np.ndarray
    sigma2_z: np.ndarray


def _eta_dy_params(data: Dataset, model: CandidateModel) -> DyParams:
    alpha = data.y + model.alpha_eps
    kappa = data.family.trials + model.kappa_eps
    try:
        return DyParams(alpha, kappa, data.family.psi)
    except ParameterError as exc:
        raise ParameterError(f"posterior DY parameters invalid for candidate {model.describe()}: {exc}") from exc


def _inv_gamma(nu, rng, size):
    # IG(nu/2, rate nu/2): (nu/2) / Gamma(nu/2, 1)
    return (nu / 2.0) / rng.standard_gamma(nu / 2.0, size=size)


def draw_aux_vector(data: Dataset, model: CandidateModel, hyper: Hyperparams, corr_factors, rng, size=None):
    """Draw the auxiliary vector for one candidate model.

    Parameters
    ----------
    corr_factors : ndarray or sequence of ndarray
        Upper Cholesky factor(s) ``U`` with ``U.T U = R_j``; a single array is
        shared by all ``r`` processes.
    size : int, optional
        Number of independent draws; ``None`` gives one unbatched draw.

    Returns
    -------
    AuxVector
    """
    n, p, r = data.n, data.p, data.r
    N = 1 if size is None else int(size)
    if isinstance(corr_factors, np.ndarray) and corr_factors.ndim == 2:
        corr_factors = [corr_factors] * r
    if len(corr_factors) != r:
        raise ConfigError(f"{len(corr_factors)} correlation factors for {r} processes")

    v_eta = dy_sample(_eta_dy_params(data, model), rng, size=(N, n))
    v_xi = model.sigma_xi * rng.standard_normal((N, n))
    s2b = _inv_gamma(hyper.nu_beta, rng, N)
    v_beta = np.sqrt(s2b)[:, None] * rng.standard_normal((N, p))
    nu_z = hyper.nu_z_vector(r)
    s2z = np.column_stack([_inv_gamma(nu_z[j], rng, N) for j in range(r)])
    v_z = np.empty((N, n, r))
    shared = all(f is corr_factors[0] for f in corr_factors)
    if shared:
        e = rng.standard_normal((n, N * r))
        v_z[:] = (corr_factors[0].T @ e).reshape(n, N, r).transpose(1, 0, 2)
    else:
        for j in range(r):
            v_z[:, :, j] = (corr_factors[j].T @ rng.standard_normal((n, N))).T
    v_z *= np.sqrt(s2z)[:, None, :]
    aux = AuxVector(v_eta, v_xi, v_beta, v_z, s2b, s2z)
    if size is None:
        aux = AuxVector(*(getattr(aux, f)[0] for f in AuxVector.__dataclass_fields__))
    return aux


def posterior_sample(
    data: Dataset,
    model: CandidateModel,
    hyper: Hyperparams,
    N: int,
    rng,
    corr_factors=None,
    cache: Optional[ProjectionCache] = None,
    events=None,
) -> PosteriorSample:
    """``N`` independent exact draws from the conditional posterior of ``gamma``.

    Correlation factors are computed from ``data.coords`` when not supplied.
    """
    if N < 1:
        raise ConfigError("N must be at least 1")
    if corr_factors is None:
        corr_factors = model_corr_factors(data.coords, model, data.r, events)
    if cache is None:
        cache = ProjectionCache(data.X, data.Xtilde)
    aux = draw_aux_vector(data, model, hyper, corr_factors, rng, size=N)
    xi, beta, z = project(data.X, data.Xtilde, aux.v_eta, aux.v_xi, aux.v_beta, aux.v_z, cache)
    return PosteriorSample(beta, z, xi, aux.sigma2_beta, aux.sigma2_z, aux.v_eta)


def model_corr_factors(coords, model: CandidateModel, r, events=None):
    """Upper correlation factors for each process (one object if shared)."""
    if model.shared_kernel:
        U = kern.corr_factor(kern.corr_matrix(coords, model.kernel), events)
        return [U] * r
    return [kern.corr_factor(kern.corr_matrix(coords, k), events) for k in model.kernels(r)]
