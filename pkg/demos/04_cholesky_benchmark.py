"""Cross-validation factor updates versus refactorization.

For K-fold cross-validation the correlation matrix of each training split
is the full matrix with one contiguous block removed.  Deleting a block
from an existing upper Cholesky factor keeps the leading rows and only
refactors the trailing block, which is cheaper than factorizing every
split from scratch.

Run:  python demos/04_cholesky_benchmark.py [n] [K]
"""

import sys
import time

import numpy as np

from stvcstack.chol import BlockedFactor, block_bounds, chol_delete_block, cholesky
from stvcstack.kernel import SpaceTimeKernel, corr_matrix

n = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
K = int(sys.argv[2]) if len(sys.argv) > 2 else 10
rng = np.random.default_rng(0)
R = corr_matrix(rng.random((n, 3)), SpaceTimeKernel(0.7, 3.0))
sizes = np.full(K, n // K)
sizes[: n % K] += 1
bf = BlockedFactor.from_matrix(R, block_bounds(sizes))


def timed(fn, repeats=5):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


t_fast, fast = timed(lambda: [chol_delete_block(R, bf, k) for k in range(K)])
t_naive, naive = timed(lambda: [cholesky(R[np.ix_(bf.keep_indices(k), bf.keep_indices(k))]) for k in range(K)])
err = max(np.abs(a - b).max() for a, b in zip(fast, naive))
print(f"n={n}, K={K}")
print(f"block deletion:   {t_fast * 1e3:8.1f} ms")
print(f"refactorization:  {t_naive * 1e3:8.1f} ms")
print(f"speedup {t_naive / t_fast:.2f}x (flop-count ratio {4 * (K - 1) / K:.1f}), max abs difference {err:.1e}")
