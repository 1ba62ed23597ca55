"""Cholesky factorization, triangular solves and block deletion."""

import numpy as np
import pytest

from conftest import random_spd
from stvcstack.chol import (
    BlockedFactor,
    Side,
    block_bounds,
    chol_delete_block,
    chol_delete_block_naive,
    cholesky,
    tri_solve,
)
from stvcstack.errors import ConfigError, FactorizationError
from stvcstack.kernel import SpaceTimeKernel, corr_matrix


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(4)), np.eye(4))

    def test_hand_2x2(self):
        np.testing.assert_allclose(cholesky([[4.0, 2.0], [2.0, 3.0]]), [[2, 1], [0, np.sqrt(2)]], atol=1e-15)

    def test_reconstruction(self, rng):
        R = random_spd(50, rng)
        U = cholesky(R)
        np.testing.assert_allclose(U.T @ U, R, atol=1e-10)
        assert np.all(np.tril(U, -1) == 0)

    def test_pivot_reported(self):
        R = np.diag([1.0, 2.0, -1.0, 4.0])
        with pytest.raises(FactorizationError) as exc:
            cholesky(R)
        assert exc.value.pivot == 2


class TestTriSolve:
    def test_identity(self, rng):
        b = rng.standard_normal(5)
        np.testing.assert_array_equal(tri_solve(np.eye(5), b), b)

    def test_hand(self):
        U = np.array([[2.0, 1.0], [0.0, np.sqrt(2)]])
        np.testing.assert_allclose(tri_solve(U, [3.0, np.sqrt(2)]), [1.0, 1.0], atol=1e-15)

    @pytest.mark.parametrize("side", list(Side))
    def test_round_trip(self, rng, side):
        U = cholesky(random_spd(20, rng))
        F = U if side.value.startswith("upper") else U.T
        A = F.T if side.value.endswith("transpose") else F
        x = rng.standard_normal((20, 3))
        np.testing.assert_allclose(tri_solve(F, A @ x, side), x, atol=1e-12)

    def test_singular(self):
        with pytest.raises(FactorizationError):
            tri_solve(np.array([[1.0, 1.0], [0.0, 0.0]]), [1.0, 1.0])


class TestBlocks:
    def test_bounds(self):
        assert block_bounds([2, 3, 1]).tolist() == [0, 2, 5, 6]
        with pytest.raises(ConfigError):
            block_bounds([2, 0])

    def test_bad_partition(self):
        with pytest.raises(ConfigError):
            BlockedFactor(np.eye(4), [0, 2, 3])


class TestDeleteBlock:
    def test_last_block_is_truncation(self, rng):
        R = random_spd(9, rng)
        bf = BlockedFactor.from_matrix(R, block_bounds([3, 3, 3]))
        np.testing.assert_array_equal(chol_delete_block(R, bf, 2), bf.factor[:6, :6])

    def test_small_interior(self, rng):
        R = random_spd(6, rng)
        bf = BlockedFactor.from_matrix(R, block_bounds([2, 2, 2]))
        np.testing.assert_allclose(chol_delete_block(R, bf, 1), chol_delete_block_naive(R, bf, 1), atol=1e-10)

    @pytest.mark.parametrize("sizes", [[10] * 10, [11, 11, 10, 10, 10, 10, 10, 10, 9, 9], [1, 5, 1, 7]])
    def test_all_blocks_match_refactorization(self, rng, sizes):
        n = sum(sizes)
        R = corr_matrix(rng.random((n, 3)), SpaceTimeKernel(0.7, 3.0))
        bf = BlockedFactor.from_matrix(R, block_bounds(sizes))
        for k in range(len(sizes)):
            U = chol_delete_block(R, bf, k)
            idx = bf.keep_indices(k)
            np.testing.assert_allclose(U, cholesky(R[np.ix_(idx, idx)]), atol=1e-8)
            np.testing.assert_allclose(U.T @ U, R[np.ix_(idx, idx)], atol=1e-10)

    def test_out_of_range(self, rng):
        R = random_spd(4, rng)
        bf = BlockedFactor.from_matrix(R, block_bounds([2, 2]))
        with pytest.raises(IndexError):
            chol_delete_block(R, bf, 2)
