"""
Unit tests for random problem instances and the incoherence parameter.
"""

import os
import sys

import numpy as np
import pytest

# Add parent and common directories to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.append(
    os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "common")
)

from cpcp_errors import InvalidDimensionError, InvalidParameterError
from instances import (
    LowRankInstance,
    SparseInstance,
    gen_low_rank,
    gen_sparse,
    incoherence_mu,
)


@pytest.mark.unit
class TestGenLowRank:
    """Test suite for gen_low_rank."""

    def test_full_rank_two_by_two(self):
        inst = gen_low_rank(2, 2, 2, seed=3)
        assert inst.rank == 2
        assert abs(np.linalg.det(inst.L)) > 1e-8

    def test_rank_one_factor_shapes(self):
        inst = gen_low_rank(5, 5, 1, seed=7)
        assert inst.sigma.shape == (1,)
        np.testing.assert_allclose(inst.U.T @ inst.U, [[1.0]], atol=1e-10)
        np.testing.assert_allclose(inst.V.T @ inst.V, [[1.0]], atol=1e-10)

    def test_factors_are_consistent(self):
        inst = gen_low_rank(12, 9, 3, seed=11)
        assert inst.U.shape == (12, 3)
        assert inst.V.shape == (9, 3)
        assert np.all(inst.sigma > 0)
        assert np.max(np.abs(inst.U.T @ inst.U - np.eye(3))) < 1e-10
        assert np.max(np.abs(inst.V.T @ inst.V - np.eye(3))) < 1e-10
        err = np.linalg.norm(inst.reconstruct() - inst.L) / np.linalg.norm(inst.L)
        assert err < 1e-10
        assert np.linalg.matrix_rank(inst.L) == 3

    def test_deterministic_given_seed(self):
        a = gen_low_rank(8, 6, 2, seed=5)
        b = gen_low_rank(8, 6, 2, seed=5)
        np.testing.assert_array_equal(a.L, b.L)
        assert not np.array_equal(a.L, gen_low_rank(8, 6, 2, seed=6).L)

    @pytest.mark.parametrize("r", [0, 6, -1])
    def test_rank_out_of_range(self, r):
        with pytest.raises(InvalidDimensionError):
            gen_low_rank(5, 5, r, seed=0)

    def test_dimension_error_is_value_error(self):
        with pytest.raises(ValueError):
            gen_low_rank(3, 3, 4, seed=0)


@pytest.mark.unit
class TestLowRankFromFactors:
    def test_valid_factors(self):
        u = np.ones((4, 1)) / 2.0
        inst = LowRankInstance.from_factors(u, [3.0], u)
        np.testing.assert_allclose(inst.L, 0.75 * np.ones((4, 4)))
        assert inst.rank == 1

    def test_rejects_non_orthonormal(self):
        with pytest.raises(InvalidParameterError):
            LowRankInstance.from_factors(np.ones((4, 1)), [1.0], np.ones((4, 1)) / 2)

    def test_rejects_non_positive_sigma(self):
        u = np.ones((4, 1)) / 2.0
        with pytest.raises(InvalidParameterError):
            LowRankInstance.from_factors(u, [0.0], u)


@pytest.mark.unit
class TestGenSparse:
    """Test suite for gen_sparse."""

    def test_zero_off_support_and_sign_agreement(self):
        inst = gen_sparse(20, 15, 0.2, magnitude=3.0, seed=4)
        assert np.all(inst.S[~inst.mask] == 0)
        assert np.all(inst.S[inst.mask] == 3.0 * inst.signs[inst.mask])
        assert set(np.unique(inst.signs[inst.mask])) <= {-1.0, 1.0}
        assert np.all(inst.signs[~inst.mask] == 0)

    def test_support_set_matches_mask(self):
        inst = gen_sparse(6, 6, 0.3, seed=2)
        assert len(inst.support) == inst.cardinality == int(inst.mask.sum())
        for i, j in inst.support:
            assert inst.mask[i, j]

    def test_rho_zero_gives_empty_support(self):
        inst = gen_sparse(10, 10, 0.0, seed=1)
        assert inst.cardinality == 0
        assert not np.any(inst.S)

    def test_realized_fraction_near_rho(self):
        inst = gen_sparse(100, 100, 0.1, seed=9)
        assert abs(inst.realized_fraction - 0.1) < 0.02

    @pytest.mark.parametrize("rho", [-0.1, 1.0, 1.5])
    def test_rho_out_of_range(self, rho):
        with pytest.raises(InvalidParameterError):
            gen_sparse(5, 5, rho, seed=0)

    def test_rejects_non_positive_magnitude(self):
        with pytest.raises(InvalidParameterError):
            gen_sparse(5, 5, 0.1, magnitude=0.0, seed=0)

    def test_from_matrix(self):
        S = np.zeros((3, 3))
        S[0, 1] = -2.0
        S[2, 2] = 5.0
        inst = SparseInstance.from_matrix(S)
        assert inst.support == {(0, 1), (2, 2)}
        assert inst.signs[0, 1] == -1.0
        assert inst.rho == 0.0


@pytest.mark.unit
class TestIncoherence:
    def test_generic_instance_in_range(self):
        score = incoherence_mu(gen_low_rank(30, 30, 3, seed=1))
        assert score.mu == max(score.mu_row, score.mu_col, score.mu_entry)
        assert 1.0 <= score.mu <= 30 * 30 / 3

    def test_row_and_column_scores_at_least_one(self):
        score = incoherence_mu(gen_low_rank(20, 10, 2, seed=8))
        assert score.mu_row >= 1.0 - 1e-9
        assert score.mu_col >= 1.0 - 1e-9

    def test_flat_factors_are_perfectly_incoherent(self):
        u = np.ones((16, 1)) / 4.0
        score = incoherence_mu(LowRankInstance.from_factors(u, [1.0], u))
        assert score.mu == pytest.approx(1.0)
        assert score.mu_entry == pytest.approx(1.0)

    def test_spiky_factors(self):
        e0 = np.zeros((9, 1))
        e0[0] = 1.0
        score = incoherence_mu(LowRankInstance.from_factors(e0, [1.0], e0))
        assert score.mu_row == pytest.approx(9.0)
        assert score.mu_entry == pytest.approx(81.0)
