#!/usr/bin/env python3
"""
Measurement and Projection Operators for compressive PCP.

This module provides the Gaussian measurement ensemble realizing the operator
Q[M] = (<H_1, M>, ..., <H_q, M>), projectors onto structured subspaces of
m x n matrices (nuclear-norm tangent spaces, supports, explicit bases and
their sums), golfing blocks built from subsets of the ensemble, and a power
iteration estimate of the operator norm ||P_A P_B||.

Matrices are vectorized row-major (M.ravel()) wherever a basis is stored.
"""

import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "common"))
from cpcp_errors import (
    DimensionMismatchError,
    GramSingularError,
    InvalidDimensionError,
    InvalidParameterError,
    NoConvergenceError,
)
from seed_utils import SeedLike, child_seed, make_rng

GRAM_CONDITION_TOL = 1e-12
BASIS_TOL = 1e-10
DIRECT_SUM_DROP_TOL = 1e-10
ANGLE_TOL = 1e-8
ANGLE_MAX_ITERS = 500
STREAM_CHUNK_ROWS = 256


def _check_shape(M: np.ndarray, shape: Tuple[int, int], what: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.shape != tuple(shape):
        raise DimensionMismatchError(f"{what}: expected {shape}, got {M.shape}")
    return M


# ---------------------------------------------------------------------------
# Measurement ensembles
# ---------------------------------------------------------------------------


class MeasurementEnsemble:
    """Dense ensemble of q matrices stored as a q x (m*n) row-major array."""

    def __init__(self, flat: np.ndarray, m: int, n: int):
        flat = np.asarray(flat, dtype=float)
        if flat.ndim == 3:
            flat = flat.reshape(flat.shape[0], -1)
        if flat.ndim != 2 or flat.shape[1] != m * n:
            raise InvalidDimensionError(
                f"Ensemble array of shape {flat.shape} does not hold {m}x{n} matrices"
            )
        if flat.shape[0] < 1:
            raise InvalidDimensionError("Ensemble needs at least one matrix")

        self.m = m
        self.n = n
        self.q = flat.shape[0]
        self.flat = flat
        self.flat.setflags(write=False)

        # Span is the whole space once q exceeds m*n; the Gram matrix is then
        # singular and projection short-circuits to the identity.
        self.full_span = self.q > m * n
        self.gram_factor: Optional[Tuple[np.ndarray, bool]] = None
        if not self.full_span:
            self.gram_factor = self._factor_gram()

    @classmethod
    def gaussian(cls, m: int, n: int, q: int, seed: SeedLike) -> "MeasurementEnsemble":
        """
        Draw q iid Gaussian matrices with entry variance 1/(mn).

        Rows are drawn in order from one stream, so the first q' < q matrices
        for a seed equal the ensemble drawn with q' for the same seed.
        """
        if q < 1:
            raise InvalidDimensionError(f"Need q >= 1 measurements, got {q}")
        rng = make_rng(seed)
        flat = rng.standard_normal((q, m * n)) / np.sqrt(m * n)
        logging.debug(f"Drew Gaussian ensemble q={q} for {m}x{n} matrices")
        return cls(flat, m, n)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return (self.m, self.n, self.q)

    @property
    def matrices(self) -> np.ndarray:
        """The ensemble as a (q, m, n) read-only view."""
        return self.flat.reshape(self.q, self.m, self.n)

    def _factor_gram(self) -> Tuple[np.ndarray, bool]:
        gram = self.flat @ self.flat.T
        eigvals = scipy.linalg.eigvalsh(gram)
        if eigvals[0] <= GRAM_CONDITION_TOL * eigvals[-1]:
            raise GramSingularError(
                f"Gram matrix ill-conditioned: smallest eigenvalue {eigvals[0]:.3e}, "
                f"largest {eigvals[-1]:.3e}"
            )
        return scipy.linalg.cho_factor(gram, lower=True)

    def apply(self, M: np.ndarray) -> np.ndarray:
        """Return the vector of inner products <H_i, M>."""
        M = _check_shape(M, (self.m, self.n), "apply")
        return self.flat @ M.ravel()

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """Return sum_i y_i H_i."""
        y = np.asarray(y, dtype=float)
        if y.shape != (self.q,):
            raise DimensionMismatchError(
                f"adjoint: expected vector of length {self.q}, got shape {y.shape}"
            )
        return (y @ self.flat).reshape(self.m, self.n)

    def gram_solve(self, y: np.ndarray) -> np.ndarray:
        """Solve G x = y with the cached Cholesky factor."""
        if self.gram_factor is None:
            raise GramSingularError("Gram matrix is singular for q > m*n")
        return scipy.linalg.cho_solve(self.gram_factor, y)

    def project_span(self, M: np.ndarray) -> np.ndarray:
        """Orthogonal projection of M onto span{H_1, ..., H_q}."""
        M = _check_shape(M, (self.m, self.n), "project_span")
        if self.full_span:
            return M.copy()
        return self.adjoint(self.gram_solve(self.apply(M)))

    def backproject(self, d: np.ndarray) -> np.ndarray:
        """
        Return the minimum-norm X with Q[X] = d, i.e. P_Q[M] when d = Q[M].
        """
        d = np.asarray(d, dtype=float)
        if d.shape != (self.q,):
            raise DimensionMismatchError(
                f"backproject: expected vector of length {self.q}, got {d.shape}"
            )
        if self.full_span:
            x, *_ = scipy.linalg.lstsq(self.flat, d)
            return x.reshape(self.m, self.n)
        return self.adjoint(self.gram_solve(d))

    def orthonormal_rows(self) -> np.ndarray:
        """Rows spanning span(Q) orthonormally (Cholesky-whitened ensemble)."""
        if self.full_span:
            return np.eye(self.m * self.n)
        lower, _ = self.gram_factor
        return scipy.linalg.solve_triangular(np.tril(lower), self.flat, lower=True)

    def block(self, indices: Sequence[int]) -> "GolfingBlock":
        """Golfing block built from the matrices at the given indices."""
        return golfing_block(self.flat[np.asarray(indices, dtype=int)], self.m, self.n)


class StreamedEnsemble:
    """
    Gaussian ensemble regenerated chunk by chunk from its seed on every use.

    Trades CPU for memory so that full-scale sweeps never hold the q x (mn)
    array. Interface matches MeasurementEnsemble for what the solver needs.
    """

    def __init__(self, m: int, n: int, q: int, seed: int, chunk_rows: int = 0):
        if q < 1 or q > m * n:
            raise InvalidDimensionError(f"Streamed ensemble needs 1 <= q <= mn: {q}")
        self.m = m
        self.n = n
        self.q = q
        self.seed = int(seed)
        self.chunk_rows = chunk_rows or STREAM_CHUNK_ROWS
        self.full_span = False
        self.gram_factor = self._factor_gram()

    @property
    def dims(self) -> Tuple[int, int, int]:
        return (self.m, self.n, self.q)

    def _chunk_bounds(self) -> Iterator[Tuple[int, int, int]]:
        for index, start in enumerate(range(0, self.q, self.chunk_rows)):
            yield index, start, min(start + self.chunk_rows, self.q)

    def _chunk(self, index: int, rows: int) -> np.ndarray:
        rng = make_rng(child_seed(self.seed, index))
        return rng.standard_normal((rows, self.m * self.n)) / np.sqrt(self.m * self.n)

    def _factor_gram(self) -> Tuple[np.ndarray, bool]:
        gram = np.empty((self.q, self.q))
        bounds = list(self._chunk_bounds())
        for a, a0, a1 in bounds:
            block_a = self._chunk(a, a1 - a0)
            for b, b0, b1 in bounds[a:]:
                block_b = block_a if a == b else self._chunk(b, b1 - b0)
                gram[a0:a1, b0:b1] = block_a @ block_b.T
                gram[b0:b1, a0:a1] = gram[a0:a1, b0:b1].T
        eigvals = scipy.linalg.eigvalsh(gram)
        if eigvals[0] <= GRAM_CONDITION_TOL * eigvals[-1]:
            raise GramSingularError("Streamed ensemble Gram matrix ill-conditioned")
        logging.info(f"Streamed ensemble Gram matrix factored (q={self.q})")
        return scipy.linalg.cho_factor(gram, lower=True)

    def apply(self, M: np.ndarray) -> np.ndarray:
        x = _check_shape(M, (self.m, self.n), "apply").ravel()
        out = np.empty(self.q)
        for index, start, stop in self._chunk_bounds():
            out[start:stop] = self._chunk(index, stop - start) @ x
        return out

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.q,):
            raise DimensionMismatchError(f"adjoint: expected length {self.q}")
        out = np.zeros(self.m * self.n)
        for index, start, stop in self._chunk_bounds():
            out += y[start:stop] @ self._chunk(index, stop - start)
        return out.reshape(self.m, self.n)

    def gram_solve(self, y: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self.gram_factor, y)

    def project_span(self, M: np.ndarray) -> np.ndarray:
        return self.adjoint(self.gram_solve(self.apply(M)))

    def backproject(self, d: np.ndarray) -> np.ndarray:
        return self.adjoint(self.gram_solve(np.asarray(d, dtype=float)))


# ---------------------------------------------------------------------------
# Subspace descriptors
# ---------------------------------------------------------------------------


class SubspaceDescriptor:
    """A subspace of m x n matrices with its orthogonal projector."""

    shape: Tuple[int, int]

    def project(self, M: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def project_complement(self, M: np.ndarray) -> np.ndarray:
        M = _check_shape(M, self.shape, "project_complement")
        return M - self.project(M)

    def basis(self) -> np.ndarray:
        """Orthonormal basis as a (dim, m*n) array of vectorized matrices."""
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return self.basis().shape[0]


@dataclass(eq=False)
class NuclearTangent(SubspaceDescriptor):
    """Tangent space T = {U X^T + Y V^T} of the nuclear norm."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        if self.U.shape[1] != self.V.shape[1]:
            raise DimensionMismatchError("U and V must have the same number of columns")
        self.shape = (self.U.shape[0], self.V.shape[0])

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def project(self, M: np.ndarray) -> np.ndarray:
        M = _check_shape(M, self.shape, "NuclearTangent.project")
        UtM = self.U.T @ M
        MV = M @ self.V
        return self.U @ UtM + MV @ self.V.T - self.U @ (UtM @ self.V) @ self.V.T

    def project_complement(self, M: np.ndarray) -> np.ndarray:
        M = _check_shape(M, self.shape, "NuclearTangent.project_complement")
        left = M - self.U @ (self.U.T @ M)
        return left - (left @ self.V) @ self.V.T

    def basis(self) -> np.ndarray:
        m, n = self.shape
        r = self.rank
        if r == 0:
            return np.zeros((0, m * n))
        u_perp = scipy.linalg.null_space(self.U.T)
        # {u_i e_j^T} spans U X^T; {u_perp_k v_l^T} spans the rest of Y V^T.
        row_part = np.einsum("ai,bj->ijab", self.U, np.eye(n)).reshape(r * n, m * n)
        col_part = np.einsum("ak,bl->klab", u_perp, self.V).reshape(-1, m * n)
        return np.vstack([row_part, col_part])

    @property
    def dim(self) -> int:
        m, n = self.shape
        return self.rank * (m + n - self.rank)


@dataclass(eq=False)
class Support(SubspaceDescriptor):
    """Matrices supported on the True entries of a boolean mask."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.shape = self.mask.shape

    @classmethod
    def from_indices(cls, shape: Tuple[int, int], indices) -> "Support":
        mask = np.zeros(shape, dtype=bool)
        for i, j in indices:
            mask[i, j] = True
        return cls(mask)

    def project(self, M: np.ndarray) -> np.ndarray:
        M = _check_shape(M, self.shape, "Support.project")
        return np.where(self.mask, M, 0.0)

    def project_complement(self, M: np.ndarray) -> np.ndarray:
        M = _check_shape(M, self.shape, "Support.project_complement")
        return np.where(self.mask, 0.0, M)

    def basis(self) -> np.ndarray:
        flat_idx = np.flatnonzero(self.mask)
        out = np.zeros((flat_idx.size, self.mask.size))
        out[np.arange(flat_idx.size), flat_idx] = 1.0
        return out

    @property
    def dim(self) -> int:
        return int(self.mask.sum())


@dataclass(eq=False)
class ExplicitBasis(SubspaceDescriptor):
    """Span of an orthonormal list of matrices, stored vectorized."""

    vectors: np.ndarray
    shape: Tuple[int, int] = field(default=(0, 0))

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=float)
        if vectors.ndim == 3:
            self.shape = vectors.shape[1:]
            vectors = vectors.reshape(vectors.shape[0], -1)
        if vectors.ndim != 2 or vectors.shape[1] != self.shape[0] * self.shape[1]:
            raise DimensionMismatchError(
                f"Basis of shape {vectors.shape} does not match matrices {self.shape}"
            )
        gram_err = (
            np.max(np.abs(vectors @ vectors.T - np.eye(vectors.shape[0])))
            if vectors.shape[0]
            else 0.0
        )
        if gram_err > BASIS_TOL:
            raise InvalidParameterError(
                f"Basis matrices are not orthonormal (max error {gram_err:.2e})"
            )
        self.vectors = vectors

    @classmethod
    def orthonormalize(cls, vectors: np.ndarray, shape: Tuple[int, int]):
        """Orthonormal basis for the span of arbitrary vectorized matrices."""
        vectors = np.asarray(vectors, dtype=float).reshape(-1, shape[0] * shape[1])
        basis = _rank_revealing_basis(vectors, DIRECT_SUM_DROP_TOL)
        return cls(basis, shape)

    @classmethod
    def random(cls, m: int, n: int, dim: int, seed: SeedLike) -> "ExplicitBasis":
        """Uniformly random dim-dimensional subspace of m x n matrices."""
        rng = make_rng(seed)
        gauss = rng.standard_normal((m * n, dim))
        q_factor, _ = scipy.linalg.qr(gauss, mode="economic")
        return cls(q_factor.T, (m, n))

    def project(self, M: np.ndarray) -> np.ndarray:
        M = _check_shape(M, self.shape, "ExplicitBasis.project")
        coeffs = self.vectors @ M.ravel()
        return (coeffs @ self.vectors).reshape(self.shape)

    def basis(self) -> np.ndarray:
        return self.vectors


def _rank_revealing_basis(vectors: np.ndarray, drop_tol: float) -> np.ndarray:
    """Orthonormal rows spanning the rows of `vectors`, by pivoted QR."""
    if vectors.shape[0] == 0:
        return np.zeros((0, vectors.shape[1]))
    q_factor, r_factor, _ = scipy.linalg.qr(
        vectors.T, mode="economic", pivoting=True
    )
    diag = np.abs(np.diag(r_factor))
    if diag.size == 0 or diag[0] == 0.0:
        return np.zeros((0, vectors.shape[1]))
    rank = int(np.sum(diag > drop_tol * diag[0]))
    return q_factor[:, :rank].T


@dataclass(eq=False)
class DirectSum(SubspaceDescriptor):
    """
    Sum of subspaces, projected through an orthonormalized pooled basis.

    The pivoted-QR rank decision with drop tolerance 1e-10 doubles as the
    independence test: `independent` is True when no direction was dropped.
    """

    parts: Sequence[SubspaceDescriptor]
    drop_tol: float = DIRECT_SUM_DROP_TOL

    def __post_init__(self):
        if not self.parts:
            raise InvalidParameterError("DirectSum needs at least one summand")
        shapes = {tuple(p.shape) for p in self.parts}
        if len(shapes) != 1:
            raise DimensionMismatchError(f"Summands have different shapes: {shapes}")
        self.shape = shapes.pop()
        pooled = np.vstack([p.basis() for p in self.parts])
        self.pooled_dim = pooled.shape[0]
        self._basis = _rank_revealing_basis(pooled, self.drop_tol)

    @property
    def independent(self) -> bool:
        return self._basis.shape[0] == self.pooled_dim

    def project(self, M: np.ndarray) -> np.ndarray:
        M = _check_shape(M, self.shape, "DirectSum.project")
        coeffs = self._basis @ M.ravel()
        return (coeffs @ self._basis).reshape(self.shape)

    def basis(self) -> np.ndarray:
        return self._basis


@dataclass(eq=False)
class Complement(SubspaceDescriptor):
    """Orthogonal complement of another descriptor."""

    inner: SubspaceDescriptor

    def __post_init__(self):
        self.shape = self.inner.shape

    def project(self, M: np.ndarray) -> np.ndarray:
        return self.inner.project_complement(M)

    def project_complement(self, M: np.ndarray) -> np.ndarray:
        return self.inner.project(M)

    def basis(self) -> np.ndarray:
        inner_basis = self.inner.basis()
        if inner_basis.shape[0] == 0:
            return np.eye(self.shape[0] * self.shape[1])
        return scipy.linalg.null_space(inner_basis).T


@dataclass(eq=False)
class EnsembleSpan(SubspaceDescriptor):
    """span(Q) of a measurement ensemble, projected through its Gram factor."""

    ens: MeasurementEnsemble

    def __post_init__(self):
        self.shape = (self.ens.m, self.ens.n)

    def project(self, M: np.ndarray) -> np.ndarray:
        return self.ens.project_span(M)

    def basis(self) -> np.ndarray:
        return self.ens.orthonormal_rows()

    @property
    def dim(self) -> int:
        return min(self.ens.q, self.ens.m * self.ens.n)


def span_descriptor(ens: MeasurementEnsemble) -> EnsembleSpan:
    """Descriptor of span(Q); its basis() whitens the ensemble."""
    return EnsembleSpan(ens)


# ---------------------------------------------------------------------------
# Golfing blocks
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class GolfingBlock:
    """The block operator A_j[M] = sum_{i in I_j} H_i <H_i, M>."""

    flat: np.ndarray
    m: int
    n: int

    @property
    def gamma(self) -> int:
        return self.flat.shape[0]

    @property
    def scale(self) -> float:
        """mn/gamma, which makes the block unbiased for the identity."""
        return self.m * self.n / self.gamma

    def apply(self, M: np.ndarray) -> np.ndarray:
        M = _check_shape(M, (self.m, self.n), "GolfingBlock.apply")
        return ((self.flat @ M.ravel()) @ self.flat).reshape(self.m, self.n)

    def apply_normalized(self, M: np.ndarray) -> np.ndarray:
        return self.scale * self.apply(M)

    def compressed(self, basis: np.ndarray, normalized: bool = True) -> np.ndarray:
        """Matrix of the block restricted to span(basis): B A B^T (dim x dim)."""
        coords = self.flat @ basis.T
        out = coords.T @ coords
        return self.scale * out if normalized else out

    def range_descriptor(self) -> ExplicitBasis:
        """Orthonormal basis of span{H_i : i in I_j}."""
        return ExplicitBasis.orthonormalize(self.flat, (self.m, self.n))


def golfing_block(matrices, m: Optional[int] = None, n: Optional[int] = None):
    """
    Build the golfing block operator from a subsequence of ensemble matrices.

    Args:
        matrices: (gamma, m, n) array, sequence of m x n matrices, or a
            (gamma, m*n) array together with m and n
        m: Rows, required only for vectorized input
        n: Columns, required only for vectorized input

    Returns:
        GolfingBlock handle with apply() and apply_normalized()
    """
    arr = np.asarray(matrices, dtype=float)
    if arr.ndim == 3:
        m, n = arr.shape[1:]
        arr = arr.reshape(arr.shape[0], -1)
    if m is None or n is None or arr.ndim != 2 or arr.shape[1] != m * n:
        raise DimensionMismatchError(f"Cannot read block matrices of shape {arr.shape}")
    if arr.shape[0] < 1:
        raise InvalidParameterError("Golfing block index set must be non-empty")
    return GolfingBlock(arr, m, n)


# ---------------------------------------------------------------------------
# Subspace angles
# ---------------------------------------------------------------------------


def subspace_angle(
    A: SubspaceDescriptor,
    B: SubspaceDescriptor,
    tol: float = ANGLE_TOL,
    max_iters: int = ANGLE_MAX_ITERS,
    seed: SeedLike = 0,
) -> float:
    """
    Estimate ||P_A P_B|| by power iteration on M -> P_B P_A P_B M.

    The Rayleigh quotient <x, P_B P_A P_B x> = ||P_A x||^2 for unit x in B
    converges to ||P_A P_B||^2; iteration stops once it changes by less
    than tol.

    Args:
        A: First subspace
        B: Second subspace
        tol: Stopping threshold on Rayleigh-quotient change
        max_iters: Iteration cap
        seed: Seed for the start vector

    Returns:
        Estimate of ||P_A P_B|| in [0, 1 + tol]

    Raises:
        DimensionMismatchError: If the subspaces live in different spaces
        NoConvergenceError: If max_iters is reached
    """
    if tuple(A.shape) != tuple(B.shape):
        raise DimensionMismatchError(f"Shapes differ: {A.shape} vs {B.shape}")

    x = B.project(make_rng(seed).standard_normal(B.shape))
    norm = np.linalg.norm(x)
    if norm == 0.0:
        return 0.0
    x /= norm

    previous = None
    for iteration in range(1, max_iters + 1):
        y = A.project(x)
        quotient = float(np.vdot(y, y))
        if previous is not None and abs(quotient - previous) < tol:
            logging.debug(f"subspace_angle converged after {iteration} iterations")
            return float(min(np.sqrt(quotient), 1.0 + tol))
        previous = quotient
        z = B.project(y)
        z_norm = np.linalg.norm(z)
        if z_norm == 0.0:
            return 0.0
        x = z / z_norm

    raise NoConvergenceError(
        f"subspace_angle did not converge in {max_iters} iterations "
        f"(last Rayleigh quotient {previous:.6e})"
    )


def cross_gram_norm(A: SubspaceDescriptor, B: SubspaceDescriptor) -> float:
    """Exact ||P_A P_B|| as the top singular value of the cross-Gram matrix."""
    basis_a, basis_b = A.basis(), B.basis()
    if basis_a.shape[0] == 0 or basis_b.shape[0] == 0:
        return 0.0
    return float(scipy.linalg.svdvals(basis_a @ basis_b.T)[0])


def operator_norm_sq(ens, iters: int = 30, seed: SeedLike = 0, whitened=False):
    """
    Power-iteration estimate of the largest eigenvalue of Q*Q.

    With whitened=True the estimate is for the whitened map P_Q, whose
    largest eigenvalue is 1.
    """
    m, n = ens.dims[:2]
    x = make_rng(seed).standard_normal((m, n))
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iters):
        y = ens.project_span(x) if whitened else ens.adjoint(ens.apply(x))
        estimate = float(np.vdot(x, y))
        y_norm = np.linalg.norm(y)
        if y_norm == 0.0:
            return 0.0
        x = y / y_norm
    return estimate
