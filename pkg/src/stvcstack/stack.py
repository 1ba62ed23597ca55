"""Predictive stacking over a grid of candidate models.

The pipeline: permute the data and cut it into ``K`` contiguous folds; for
every candidate model and fold draw ``S`` exact posterior samples on the
training part (Cholesky factors come from the full-data factor via block
deletion), predict the processes at the held-out coordinates and average the
likelihood into leave-one-out predictive densities; maximise the mean log
stacked density over the simplex; finally draw from each retained model on
the full data.

Every (model, fold) cell owns a Philox stream derived from
``(seed, stream_key, fold)`` so results do not depend on scheduling.
"""

from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import kernel as kern
from .chol import BlockedFactor, block_bounds, chol_delete_block, chol_delete_block_naive
from .errors import ConfigError, NumericalError, StvcError
from .model import (
    CandidateModel,
    Dataset,
    Hyperparams,
    PosteriorSample,
    ProjectionCache,
    make_candidate,
    model_corr_factors,
    posterior_sample,
)
from .predict import LOG_DENSITY_FLOOR, pointwise_pred_density, predict_latent

logger = logging.getLogger(__name__)

__all__ = [
    "FoldPartition",
    "LooDensityMatrix",
    "StackingWeights",
    "StackedDraws",
    "StackingResult",
    "CellError",
    "build_grid",
    "make_folds",
    "cell_rng",
    "compute_loo_matrix",
    "solve_weights",
    "stacking_objective",
    "stacked_sample",
    "mlpd",
    "holdout_log_density",
    "fit_stacking",
    "FULL_FIT",
    "HOLDOUT",
    "PREDICT",
    "STACKED",
]

# fold indices reserved for streams outside the K folds
FULL_FIT = -1
HOLDOUT = -2
PREDICT = -3
STACKED = -4
_FOLD_OFFSET = 4


class CellError(StvcError):
    """Failure inside one (model, fold) cell."""

    def __init__(self, model_index, fold, cause):
        super().__init__(f"cell (model {model_index}, fold {fold}) failed: {cause}")
        self.model_index = model_index
        self.fold = fold
        self.cause = cause


def cell_rng(seed, key, fold) -> np.random.Generator:
    """Counter-based generator for one task, independent of execution order."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(key), int(fold) + _FOLD_OFFSET))
    return np.random.Generator(np.random.Philox(ss))


def build_grid(alpha_eps, sigma_xi, phi1, phi2, family) -> list:
    """Cartesian product of the grids as reduced-model candidates.

    Order is ``alpha_eps`` slowest, then ``sigma_xi``, ``phi1``, ``phi2``.
    """
    grids = {"alpha_eps": alpha_eps, "sigma_xi": sigma_xi, "phi1": phi1, "phi2": phi2}
    for name, g in grids.items():
        if len(g) == 0:
            raise ConfigError(f"grid {name} is empty")
        if any(not v > 0 for v in g):
            raise ConfigError(f"grid {name} must contain positive values, got {list(g)}")
    return [
        make_candidate(a, s, kern.SpaceTimeKernel(float(f1), float(f2)), family)
        for a, s, f1, f2 in itertools.product(alpha_eps, sigma_xi, phi1, phi2)
    ]


@dataclass(frozen=True)
class FoldPartition:
    """Random permutation of ``0..n-1`` cut into contiguous blocks.

    Fold ``k`` holds the original indices ``permutation[bounds[k]:bounds[k+1]]``.
    """

    permutation: np.ndarray
    bounds: np.ndarray

    @property
    def n_folds(self) -> int:
        return len(self.bounds) - 1

    def fold(self, k) -> np.ndarray:
        return self.permutation[self.bounds[k] : self.bounds[k + 1]]

    def sizes(self) -> np.ndarray:
        return np.diff(self.bounds)


def make_folds(n, K, seed) -> FoldPartition:
    """Seeded permutation split into ``K`` blocks whose sizes differ by at most one."""
    if not 2 <= K <= n:
        raise ConfigError(f"need 2 <= K <= n, got K={K}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = np.full(K, n // K)
    sizes[: n % K] += 1
    return FoldPartition(perm, block_bounds(sizes))


@dataclass
class LooDensityMatrix:
    """Leave-one-out log predictive densities, ``(n, L)``, floored at ``e**-740``."""

    log_values: np.ndarray
    floored: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def values(self):
        return np.exp(self.log_values)

    @property
    def shape(self):
        return self.log_values.shape


def _fold_task(args):
    """All K folds of one candidate model on permuted data."""
    data, model, bounds, caches, S, seed, key, l, hyper, naive = args
    r = data.r
    kernels = model.kernels(r)
    nu_z = hyper.nu_z_vector(r)
    events = []
    out = np.empty(data.n)
    try:
        full = {}
        for kp in dict.fromkeys(kernels):
            R = kern.corr_matrix(data.coords, kp)
            full[kp] = (R, BlockedFactor(kern.corr_factor(R, events), bounds))
    except Exception as exc:
        raise CellError(l, "full", exc) from exc
    delete = chol_delete_block_naive if naive else chol_delete_block
    for k in range(len(bounds) - 1):
        try:
            held = np.arange(bounds[k], bounds[k + 1])
            keep = np.r_[0 : bounds[k], bounds[k + 1] : data.n]
            train, test = data.subset(keep), data.subset(held)
            facs = {kp: delete(R, bf, k) for kp, (R, bf) in full.items()}
            factors = [facs[kp] for kp in kernels]
            rng = cell_rng(seed, key, k)
            draws = posterior_sample(train, model, hyper, S, rng, factors, caches[k])
            zt = predict_latent(draws.z, train.coords, test.coords, kernels, nu_z, rng, factors, events)
            out[held] = pointwise_pred_density(test.y, test.X, test.Xtilde, draws.beta, zt, test.family)
        except CellError:
            raise
        except Exception as exc:
            raise CellError(l, k, exc) from exc
    return out, events


def _run(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


def compute_loo_matrix(
    data: Dataset,
    models: Sequence[CandidateModel],
    folds: FoldPartition,
    S: int,
    seed: int,
    hyper: Hyperparams = Hyperparams(),
    workers: int = 1,
    naive_chol: bool = False,
    stream_keys: Optional[Sequence[int]] = None,
) -> LooDensityMatrix:
    """K-fold leave-one-out predictive densities for every candidate model.

    Parameters
    ----------
    S : int
        Posterior draws per (model, fold) cell.
    seed : int
        Master seed for the per-cell streams.
    naive_chol : bool
        Refactor each fold's correlation matrix from scratch instead of using
        the block-deletion update (for verification).
    stream_keys : sequence of int, optional
        Stream identity per model; defaults to the model index.
    """
    if S < 1:
        raise ConfigError("S must be at least 1")
    if stream_keys is None:
        stream_keys = range(len(models))
    perm = folds.permutation
    pdata = data.subset(perm)
    bounds = folds.bounds
    caches = []
    for k in range(folds.n_folds):
        keep = np.r_[0 : bounds[k], bounds[k + 1] : data.n]
        caches.append(ProjectionCache(pdata.X[keep], pdata.Xtilde[keep]))
    tasks = [
        (pdata, m, bounds, caches, S, seed, key, l, hyper, naive_chol)
        for l, (m, key) in enumerate(zip(models, stream_keys))
    ]
    t0 = time.perf_counter()
    results = _run(_fold_task, tasks, workers)
    logp = np.empty((data.n, len(models)))
    events = []
    for l, (col, ev) in enumerate(results):
        logp[perm, l] = col
        events.extend({"model": l, **e} for e in ev)
    if not np.all(np.isfinite(logp) | (logp == -np.inf)):
        raise NumericalError("non-finite leave-one-out density")
    floored = int(np.sum(logp < LOG_DENSITY_FLOOR))
    if floored:
        logger.warning("%d leave-one-out densities floored at exp(%g)", floored, LOG_DENSITY_FLOOR)
    logp = np.maximum(logp, LOG_DENSITY_FLOOR)
    meta = {"seconds": time.perf_counter() - t0, "jitter_events": events}
    return LooDensityMatrix(logp, floored, meta)


@dataclass
class StackingWeights:
    w: np.ndarray
    objective: float
    iterations: int
    converged: bool
    method: str = "em"

    def __len__(self):
        return len(self.w)


def _as_log_matrix(loo):
    if isinstance(loo, LooDensityMatrix):
        logP = loo.log_values
    else:
        with np.errstate(divide="ignore"):
            logP = np.log(np.asarray(loo, dtype=float))
    if logP.ndim != 2:
        raise ConfigError("density matrix must be two-dimensional")
    if not np.all(np.isfinite(logP)):
        raise NumericalError("density matrix has zero or non-finite entries")
    return logP


def stacking_objective(loo, w) -> float:
    """Mean log of the stacked density ``(1/n) sum_i log sum_l w_l p_il``."""
    logP = _as_log_matrix(loo)
    with np.errstate(divide="ignore"):
        return float(np.mean(logsumexp(logP + np.log(np.asarray(w, dtype=float)), axis=1)))


def _project_simplex(v):
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / np.arange(1, len(v) + 1) > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def _projected_gradient(P, w, shift, max_iter=10_000, tol=1e-12):
    def f(w):
        return np.mean(np.log(P @ w)) + shift

    obj = f(w)
    step = 1.0
    for it in range(max_iter):
        grad = P.T @ (1.0 / (P @ w)) / len(P)
        while True:
            cand = _project_simplex(w + step * grad)
            val = f(cand) if np.all(P @ cand > 0) else -np.inf
            if val >= obj or step < 1e-16:
                break
            step *= 0.5
        if val < obj:
            break
        done = val - obj <= tol * max(abs(obj), 1.0)
        w, obj = cand, val
        step *= 2.0
        if done:
            return w, obj, it + 1, True
    return w, obj, max_iter, False


def solve_weights(loo, tol=1e-10, max_iter=100_000, trace=None) -> StackingWeights:
    """Stacking weights maximising the mean log stacked density on the simplex.

    Uses the mixture-weight EM fixed point
    ``w_l <- (1/n) sum_i w_l p_il / sum_m w_m p_im`` from uniform weights,
    stopping when the objective change drops below ``tol`` relative to the
    row-scaled objective (at least 1).  Each iteration is checked for
    monotonicity.  If EM has not converged after
    ``max_iter`` iterations, projected gradient ascent continues from the EM
    iterate.

    Parameters
    ----------
    loo : LooDensityMatrix or array_like
        Either a :class:`LooDensityMatrix` (log scale) or a matrix of positive
        densities.
    trace : list, optional
        Receives the objective after every EM iteration (starting with the
        uniform-weight value).
    """
    logP = _as_log_matrix(loo)
    n, L = logP.shape
    shift = logP.max(axis=1, keepdims=True)
    P = np.exp(logP - shift)  # row scaling leaves the maximiser unchanged
    shift = float(shift.mean())
    w = np.full(L, 1.0 / L)
    mix = P @ w
    obj = float(np.mean(np.log(mix))) + shift
    if trace is not None:
        trace.append(obj)
    for it in range(1, max_iter + 1):
        w_new = w * (P.T @ (1.0 / mix)) / n
        w_new /= w_new.sum()
        mix = P @ w_new
        obj_new = float(np.mean(np.log(mix))) + shift
        if not np.isfinite(obj_new):
            raise NumericalError("stacking objective became non-finite")
        if obj_new < obj - 1e-12 * max(abs(obj), 1.0):
            raise NumericalError(f"EM objective decreased at iteration {it}: {obj} -> {obj_new}")
        if trace is not None:
            trace.append(obj_new)
        change = abs(obj_new - obj)
        w, obj = w_new, obj_new
        # measured on the row-scaled objective, so adding constants to the
        # log densities does not change when EM stops
        if change <= tol * max(abs(obj - shift), 1.0):
            return StackingWeights(w / w.sum(), obj, it, True, "em")
    logger.warning("EM did not converge in %d iterations; switching to projected gradient", max_iter)
    w, obj, extra, ok = _projected_gradient(P, w, shift)
    return StackingWeights(w / w.sum(), float(obj), max_iter + extra, ok, "em+projected_gradient")


@dataclass
class StackedDraws:
    """Draws from the stacked posterior with the model each came from."""

    model_index: np.ndarray
    draw_index: np.ndarray
    sample: Optional[PosteriorSample]

    def __len__(self):
        return len(self.model_index)


def stacked_sample(weights, per_model_draws, count, rng) -> StackedDraws:
    """Sample the mixture ``sum_l w_l p(. | y, M_l)`` from stored draws.

    Each output picks model ``l`` with probability ``w_l`` and then one of
    that model's stored draws uniformly.  ``per_model_draws`` is a list
    indexed by model or a dict for a subset of models; weights of absent
    models are dropped and the rest renormalised.
    """
    w = np.asarray(weights.w if isinstance(weights, StackingWeights) else weights, dtype=float)
    if isinstance(per_model_draws, dict):
        avail = sorted(per_model_draws)
    else:
        avail = list(range(len(per_model_draws)))
        per_model_draws = dict(enumerate(per_model_draws))
    if not avail:
        raise ConfigError("no stored posterior draws")
    pw = w[avail]
    if pw.sum() <= 0:
        raise ConfigError("stored models carry zero stacking weight")
    pw = pw / pw.sum()
    picks = rng.choice(len(avail), size=int(count), p=pw)
    models = np.asarray(avail, dtype=int)[picks]
    draw_idx = np.empty(int(count), dtype=int)
    parts, order = [], []
    for l in np.unique(models):
        sel = np.flatnonzero(models == l)
        d = per_model_draws[l]
        if len(d) < 1:
            raise ConfigError(f"model {l} has no stored draws")
        idx = rng.integers(len(d), size=len(sel))
        draw_idx[sel] = idx
        parts.append(d[idx])
        order.append(sel)
    if count == 0:
        first = per_model_draws[avail[0]]
        return StackedDraws(models, draw_idx, first[np.arange(0)])
    sample = PosteriorSample.concatenate(parts)
    inv = np.empty(int(count), dtype=int)
    inv[np.concatenate(order)] = np.arange(int(count))
    return StackedDraws(models, draw_idx, sample[inv])


def mlpd(holdout_log_densities, weights) -> float:
    """Mean over held-out points of ``log sum_l w_l p_l(y)``.

    ``holdout_log_densities`` is ``(m, L)`` on the log scale.
    """
    logP = np.asarray(holdout_log_densities, dtype=float)
    w = np.asarray(weights.w if isinstance(weights, StackingWeights) else weights, dtype=float)
    with np.errstate(divide="ignore"):
        return float(np.mean(logsumexp(logP + np.log(w), axis=1)))


def holdout_log_density(train: Dataset, model: CandidateModel, draws: PosteriorSample, test: Dataset, hyper, rng, events=None):
    """Log predictive density at each ``test`` observation from full-data draws.

    Test points are processed in lexicographic coordinate order, so the
    result does not depend on the order of the rows in ``test``.
    """
    order = np.lexsort(test.coords.T[::-1])
    test_sorted = test.subset(order)
    kernels = model.kernels(train.r)
    factors = model_corr_factors(train.coords, model, train.r, events)
    nu_z = hyper.nu_z_vector(train.r)
    zt = predict_latent(draws.z, train.coords, test_sorted.coords, kernels, nu_z, rng, factors, events)
    out = np.empty(test.n)
    out[order] = pointwise_pred_density(
        test_sorted.y, test_sorted.X, test_sorted.Xtilde, draws.beta, zt, test_sorted.family
    )
    return out


@dataclass
class StackingResult:
    data: Dataset
    models: list
    hyper: Hyperparams
    folds: FoldPartition
    loo: LooDensityMatrix
    weights: StackingWeights
    draws: dict
    seed: int
    meta: dict = field(default_factory=dict)

    def stacked(self, count, rng) -> StackedDraws:
        return stacked_sample(self.weights, self.draws, count, rng)

    def holdout_log_densities(self, test: Dataset) -> np.ndarray:
        """``(m, L_retained)`` holdout log densities and the retained model indices."""
        cols = []
        for l in sorted(self.draws):
            rng = cell_rng(self.seed, l, HOLDOUT)
            cols.append(holdout_log_density(self.data, self.models[l], self.draws[l], test, self.hyper, rng))
        return np.column_stack(cols) if cols else np.empty((test.n, 0))

    def mlpd(self, test: Dataset) -> float:
        keep = sorted(self.draws)
        return mlpd(self.holdout_log_densities(test), self.weights.w[keep] / self.weights.w[keep].sum())


def _full_task(args):
    data, model, hyper, N, seed, l, cache = args
    events = []
    try:
        rng = cell_rng(seed, l, FULL_FIT)
        return posterior_sample(data, model, hyper, N, rng, cache=cache, events=events), events
    except Exception as exc:
        raise CellError(l, "full", exc) from exc


def fit_stacking(
    data: Dataset,
    models: Sequence[CandidateModel],
    K: int = 10,
    S: int = 500,
    N: int = 1000,
    seed: int = 0,
    hyper: Hyperparams = Hyperparams(),
    workers: int = 1,
    retain_all: bool = False,
    retain_threshold: float = 1e-4,
) -> StackingResult:
    """Run the full stacking pipeline.

    Final ``N`` full-data draws are produced only for models whose weight
    exceeds ``retain_threshold`` unless ``retain_all`` is set.
    """
    models = list(models)
    if not models:
        raise ConfigError("no candidate models")
    t0 = time.perf_counter()
    folds = make_folds(data.n, K, seed)
    loo = compute_loo_matrix(data, models, folds, S, seed, hyper, workers)
    t1 = time.perf_counter()
    weights = solve_weights(loo)
    keep = [l for l in range(len(models)) if retain_all or weights.w[l] > retain_threshold]
    cache = ProjectionCache(data.X, data.Xtilde)
    results = _run(_full_task, [(data, models[l], hyper, N, seed, l, cache) for l in keep], workers)
    draws = {l: res[0] for l, res in zip(keep, results)}
    events = loo.meta["jitter_events"] + [{"model": l, "stage": "full", **e} for l, res in zip(keep, results) for e in res[1]]
    meta = {
        "timings": {"loo_seconds": t1 - t0, "total_seconds": time.perf_counter() - t0},
        "floored_densities": loo.floored,
        "jitter_events": events,
        "retained_models": keep,
        "retain_all": retain_all,
        "retain_threshold": retain_threshold,
        "em_iterations": weights.iterations,
        "weights_method": weights.method,
    }
    return StackingResult(data, models, hyper, folds, loo, weights, draws, seed, meta)
