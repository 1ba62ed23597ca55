"""Dense Cholesky factors and block row/column deletion updates.

Factors are upper triangular throughout (``R = U.T @ U``).  The deletion
update serves K-fold cross-validation: for a contiguous block partition of
``R`` the factor of ``R`` with block ``k`` removed reuses the leading blocks
of the full factor and refactors only the trailing block,

    C33 = chol(U33.T @ U33 + U23.T @ U23),

which equals ``chol(R33 - U13.T @ U13)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import blas, lapack, solve_triangular

from .errors import ConfigError, FactorizationError

__all__ = [
    "Side",
    "BlockedFactor",
    "cholesky",
    "tri_solve",
    "chol_delete_block",
    "chol_delete_block_naive",
    "block_bounds",
]


class Side(str, enum.Enum):
    LOWER = "lower"
    UPPER = "upper"
    LOWER_TRANSPOSE = "lower_transpose"
    UPPER_TRANSPOSE = "upper_transpose"


def cholesky(R) -> np.ndarray:
    """Upper-triangular ``U`` with ``U.T @ U = R``.

    Raises
    ------
    FactorizationError
        On a non-positive pivot; ``pivot`` holds its zero-based index.
    """
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {R.shape}")
    if R.size == 0:
        return np.zeros((0, 0))
    U, info = lapack.dpotrf(R, lower=0, clean=1, overwrite_a=0)
    if info > 0:
        raise FactorizationError(f"matrix not positive definite (pivot {info - 1})", pivot=info - 1)
    if info < 0:
        raise FactorizationError(f"dpotrf argument error {info}")
    return U


def tri_solve(factor, rhs, side=Side.UPPER):
    """Solve ``A x = rhs`` with ``A`` the triangular ``factor`` or its transpose."""
    side = Side(side)
    factor = np.asarray(factor, dtype=float)
    if np.any(np.diag(factor) == 0):
        raise FactorizationError("triangular factor is singular (zero on the diagonal)")
    lower = side in (Side.LOWER, Side.LOWER_TRANSPOSE)
    trans = 1 if side in (Side.LOWER_TRANSPOSE, Side.UPPER_TRANSPOSE) else 0
    return solve_triangular(factor, rhs, trans=trans, lower=lower, check_finite=False)


def block_bounds(sizes) -> np.ndarray:
    """Offsets ``[0, n_1, n_1 + n_2, ..., n]`` of contiguous blocks."""
    sizes = np.asarray(sizes, dtype=int)
    if sizes.ndim != 1 or np.any(sizes < 1):
        raise ConfigError("block sizes must be positive integers")
    return np.concatenate([[0], np.cumsum(sizes)])


@dataclass(frozen=True)
class BlockedFactor:
    """Upper Cholesky factor with a contiguous block partition of its indices.

    Parameters
    ----------
    factor : ndarray, shape (n, n)
    bounds : ndarray of int, shape (K + 1,)
        Block ``k`` covers indices ``bounds[k]:bounds[k + 1]``.
    """

    factor: np.ndarray
    bounds: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=int)
        n = self.factor.shape[0]
        if b[0] != 0 or b[-1] != n or np.any(np.diff(b) < 1):
            raise ConfigError(f"bounds {b.tolist()} do not partition 0..{n}")
        object.__setattr__(self, "bounds", b)

    @classmethod
    def from_matrix(cls, R, bounds):
        return cls(cholesky(R), bounds)

    @property
    def n_blocks(self) -> int:
        return len(self.bounds) - 1

    def block(self, k) -> slice:
        return slice(self.bounds[k], self.bounds[k + 1])

    def keep_indices(self, k) -> np.ndarray:
        n = self.factor.shape[0]
        return np.r_[0 : self.bounds[k], self.bounds[k + 1] : n]


def _upper_gram(U):
    """Upper triangle of ``U.T @ U`` for upper-triangular ``U`` (LAPACK lauum).

    lauum forms ``L.T @ L`` for lower ``L``; reversing rows and columns turns
    ``U`` into such an ``L`` and maps the result back.
    """
    L = np.asfortranarray(U[::-1, ::-1])
    G, info = lapack.dlauum(L, lower=1, overwrite_c=1)
    if info != 0:
        raise FactorizationError(f"dlauum failed with info {info}")
    return np.asfortranarray(G[::-1, ::-1])


def chol_delete_block(R, factor: BlockedFactor, k: int) -> np.ndarray:
    """Upper factor of ``R`` with the rows and columns of block ``k`` deleted.

    ``k`` is zero-based.  The first block is handled by a fresh
    factorization, the last block by truncating the stored factor, and any
    interior block by copying the leading rows and refactoring the trailing
    block only.
    """
    K = factor.n_blocks
    if not 0 <= k < K:
        raise IndexError(f"block index {k} out of range for {K} blocks")
    U = factor.factor
    a, e = factor.bounds[k], factor.bounds[k + 1]
    n = U.shape[0]
    if k == 0:
        return cholesky(np.asarray(R)[e:, e:])
    if k == K - 1:
        return U[:a, :a].copy()

    m = n - (e - a)
    out = np.zeros((m, m))
    out[:a, :a] = U[:a, :a]
    out[:a, a:] = U[:a, e:]
    gram = _upper_gram(U[e:, e:])
    gram = blas.dsyrk(1.0, U[a:e, e:], trans=1, lower=0, c=gram, beta=1.0, overwrite_c=1)
    C33, info = lapack.dpotrf(gram, lower=0, clean=1, overwrite_a=1)
    if info != 0:
        raise FactorizationError(f"trailing block not positive definite (pivot {info - 1})", pivot=info - 1)
    out[a:, a:] = C33
    return out


def chol_delete_block_naive(R, factor: BlockedFactor, k: int) -> np.ndarray:
    """Reference: refactor the reduced matrix from scratch."""
    idx = factor.keep_indices(k)
    return cholesky(np.asarray(R)[np.ix_(idx, idx)])
