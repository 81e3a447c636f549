#!/usr/bin/env python3
"""
Problem Instances - Random low-rank and sparse components for CPCP.

Generates seeded rank-r matrices (Gaussian factor products re-factored through
a thin SVD), Bernoulli-Rademacher sparse corruptions, and the incoherence
parameter of a low-rank component.
"""

import logging
import os
import sys
from dataclasses import dataclass
from typing import Set, Tuple

import numpy as np
import scipy.linalg

# Add common directory to path (for local dev)
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "common"))
from cpcp_errors import InvalidDimensionError, InvalidParameterError
from seed_utils import SeedLike, make_rng

DEFAULT_MAGNITUDE = 10.0
ORTHONORMAL_TOL = 1e-10


@dataclass(frozen=True)
class LowRankInstance:
    """Rank-r matrix L = U diag(sigma) V^T with its thin SVD factors."""

    L: np.ndarray
    U: np.ndarray
    V: np.ndarray
    sigma: np.ndarray
    rank: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.L.shape

    def reconstruct(self) -> np.ndarray:
        """Return U diag(sigma) V^T."""
        return (self.U * self.sigma) @ self.V.T

    @classmethod
    def from_factors(cls, U: np.ndarray, sigma: np.ndarray, V: np.ndarray):
        """Build an instance from given factors after checking orthonormality."""
        U = np.asarray(U, dtype=float)
        V = np.asarray(V, dtype=float)
        sigma = np.asarray(sigma, dtype=float).ravel()
        r = sigma.size
        if r == 0 or np.any(sigma <= 0):
            raise InvalidParameterError("Singular values must be positive")
        if U.shape[1] != r or V.shape[1] != r:
            raise InvalidDimensionError(
                f"Factor widths {U.shape[1]}, {V.shape[1]} do not match rank {r}"
            )
        for name, factor in (("U", U), ("V", V)):
            gram_err = np.max(np.abs(factor.T @ factor - np.eye(r)))
            if gram_err > ORTHONORMAL_TOL:
                raise InvalidParameterError(
                    f"{name} columns not orthonormal (max error {gram_err:.2e})"
                )
        return cls(L=(U * sigma) @ V.T, U=U, V=V, sigma=sigma, rank=r)


@dataclass(frozen=True)
class SparseInstance:
    """Sparse corruption S with its support mask and signs."""

    S: np.ndarray
    mask: np.ndarray  # boolean, True on the support
    signs: np.ndarray  # +1/-1 on the support, 0 elsewhere
    rho: float

    @property
    def support(self) -> Set[Tuple[int, int]]:
        rows, cols = np.nonzero(self.mask)
        return {(int(i), int(j)) for i, j in zip(rows, cols)}

    @property
    def cardinality(self) -> int:
        return int(self.mask.sum())

    @property
    def realized_fraction(self) -> float:
        return self.cardinality / self.mask.size

    @classmethod
    def from_matrix(cls, S: np.ndarray, rho: float = 0.0):
        """Wrap an explicit sparse matrix; the support is its nonzero pattern."""
        S = np.asarray(S, dtype=float)
        mask = S != 0
        return cls(S=S, mask=mask, signs=np.sign(S), rho=rho)


@dataclass(frozen=True)
class IncoherenceScore:
    """Smallest mu satisfying each incoherence inequality, and their max."""

    mu_row: float
    mu_col: float
    mu_entry: float
    mu: float


def gen_low_rank(m: int, n: int, r: int, seed: SeedLike) -> LowRankInstance:
    """
    Generate L = A B^T with iid standard Gaussian factors A (m x r), B (n x r).

    Args:
        m: Number of rows
        n: Number of columns
        r: Target rank, 1 <= r <= min(m, n)
        seed: Generator seed

    Returns:
        LowRankInstance with consistent thin-SVD factors

    Raises:
        InvalidDimensionError: If r is out of range
    """
    if m < 1 or n < 1 or not 1 <= r <= min(m, n):
        raise InvalidDimensionError(
            f"Rank {r} out of range for a {m}x{n} matrix (need 1 <= r <= min(m, n))"
        )

    rng = make_rng(seed)
    A = rng.standard_normal((m, r))
    B = rng.standard_normal((n, r))
    L = A @ B.T

    U, sigma, Vt = scipy.linalg.svd(L, full_matrices=False)
    U, sigma, V = U[:, :r], sigma[:r], Vt[:r, :].T
    logging.debug(f"Generated {m}x{n} rank-{r} instance, sigma={sigma}")
    return LowRankInstance(L=(U * sigma) @ V.T, U=U, V=V, sigma=sigma, rank=r)


def gen_sparse(
    m: int,
    n: int,
    rho: float,
    magnitude: float = DEFAULT_MAGNITUDE,
    seed: SeedLike = 0,
) -> SparseInstance:
    """
    Draw an iid Bernoulli(rho) support with Rademacher signs.

    Args:
        m: Number of rows
        n: Number of columns
        rho: Probability that an entry is corrupted, 0 <= rho < 1
        magnitude: Absolute value of every nonzero entry
        seed: Generator seed

    Returns:
        SparseInstance whose nonzeros equal magnitude * sign

    Raises:
        InvalidParameterError: If rho is outside [0, 1) or magnitude <= 0
    """
    if not 0.0 <= rho < 1.0:
        raise InvalidParameterError(f"rho must lie in [0, 1), got {rho}")
    if magnitude <= 0:
        raise InvalidParameterError(f"magnitude must be positive, got {magnitude}")

    rng = make_rng(seed)
    mask = rng.random((m, n)) < rho
    coin = rng.integers(0, 2, size=(m, n)) * 2 - 1
    signs = np.where(mask, coin, 0).astype(float)
    S = magnitude * signs
    logging.debug(f"Generated sparse {m}x{n} component with {mask.sum()} nonzeros")
    return SparseInstance(S=S, mask=mask, signs=signs, rho=float(rho))


def incoherence_mu(inst: LowRankInstance) -> IncoherenceScore:
    """
    Compute the tight incoherence parameters of a low-rank instance.

    mu_row = (m/r) max_i ||U^T e_i||^2, mu_col = (n/r) max_j ||V^T e_j||^2,
    mu_entry = (mn/r) ||U V^T||_inf^2, and mu is the largest of the three.

    Args:
        inst: Low-rank instance

    Returns:
        IncoherenceScore
    """
    m, n = inst.shape
    r = inst.rank
    mu_row = m / r * float(np.max(np.sum(inst.U**2, axis=1)))
    mu_col = n / r * float(np.max(np.sum(inst.V**2, axis=1)))
    mu_entry = m * n / r * float(np.max(np.abs(inst.U @ inst.V.T))) ** 2
    return IncoherenceScore(
        mu_row=mu_row,
        mu_col=mu_col,
        mu_entry=mu_entry,
        mu=max(mu_row, mu_col, mu_entry),
    )
