#!/usr/bin/env python3
"""
PCP and Compressive PCP Solvers.

Both programs minimize ||L||_* + lambda ||S||_1 subject to a data constraint:
L + S = M (PCP) or Q[L + S] = d (CPCP). The solver smooths the constraint
into a quadratic penalty (1/2mu) ||data misfit||^2, runs accelerated proximal
gradient steps (singular value thresholding for L, soft thresholding for S)
and drives mu down geometrically (continuation).

For CPCP the misfit is measured in whitened coordinates, ||P_Q[L + S - M]||_F,
so the smooth part has a unit-norm operator regardless of the ensemble's
conditioning. The recorded residual is the raw ||Q[L + S] - d|| / ||d||.
"""

import enum
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "common"))
from cpcp_errors import DimensionMismatchError, InvalidParameterError, SVDFailureError

from operators import operator_norm_sq

DEFAULT_SUCCESS_TOL = 1e-3
DIVERGENCE_FACTOR = 10.0
# A stage may not end with a residual above the previous stage's by more than this.
STAGE_RESIDUAL_JITTER = 1e-12


class SolveStatus(enum.Enum):
    """Termination states of a solve."""

    CONVERGED = "converged"
    MAX_ITERS = "max-iters"
    DIVERGED = "diverged"


@dataclass
class SolverConfig:
    """Accelerated proximal gradient with continuation settings."""

    lambda_: Optional[float] = None  # None -> 1/sqrt(m), m the larger side
    mu0_scale: float = 0.99
    continuation_factor: float = 0.9
    mu_min_ratio: float = 1e-8
    max_iters: int = 5000
    rel_tol: float = 1e-7
    step_safety: float = 0.99
    # Safety cap per intermediate stage; a stage normally ends on rel_tol.
    stage_max_iters: int = 1000
    # Residuals at or below this are round-off and never count as divergence.
    divergence_floor: float = 1e-10
    power_iters: int = 30
    log_every: int = 100

    def __post_init__(self):
        if self.lambda_ is not None and self.lambda_ <= 0:
            raise InvalidParameterError(f"lambda must be positive, got {self.lambda_}")
        if self.mu0_scale <= 0:
            raise InvalidParameterError("mu0_scale must be positive")
        if not 0.0 < self.continuation_factor < 1.0:
            raise InvalidParameterError("continuation_factor must lie in (0, 1)")
        if not 0.0 < self.mu_min_ratio <= 1.0:
            raise InvalidParameterError("mu_min_ratio must lie in (0, 1]")
        if self.max_iters < 1 or self.stage_max_iters < 1 or self.power_iters < 1:
            raise InvalidParameterError("Iteration counts must be at least 1")
        if self.rel_tol <= 0:
            raise InvalidParameterError("rel_tol must be positive")
        if not 0.0 < self.step_safety <= 1.0:
            raise InvalidParameterError("step_safety must lie in (0, 1]")
        if self.divergence_floor < 0:
            raise InvalidParameterError("divergence_floor must be non-negative")

    def lam_for(self, m: int, n: int) -> float:
        """
        Sparse-term weight, defaulting to 1/sqrt(m).

        For non-square data m is taken as the larger dimension, which reduces
        to 1/sqrt(m) for the square matrices the recovery guarantees cover.
        """
        if self.lambda_ is not None:
            return self.lambda_
        return 1.0 / np.sqrt(max(m, n))


@dataclass
class SolveResult:
    """Recovered pair with convergence bookkeeping."""

    L: np.ndarray
    S: np.ndarray
    iterations: int
    final_mu: float
    residual_history: List[float]
    status: SolveStatus
    stage_residuals: List[float] = field(default_factory=list)
    objective: float = 0.0
    dual: Optional[np.ndarray] = None

    @property
    def converged(self) -> bool:
        return self.status == SolveStatus.CONVERGED

    def summary(self) -> dict:
        """Scalar fields only, suitable for logging and JSON."""
        final_residual = self.residual_history[-1] if self.residual_history else 0.0
        return {
            "status": self.status.value,
            "iterations": self.iterations,
            "final_mu": self.final_mu,
            "final_residual": final_residual,
            "stages": len(self.stage_residuals),
            "objective": self.objective,
            "rank_L": int(np.linalg.matrix_rank(self.L)) if self.L.size else 0,
            "nnz_S": int(np.count_nonzero(self.S)),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary())


# ---------------------------------------------------------------------------
# Proximal maps
# ---------------------------------------------------------------------------


def soft_threshold(M: np.ndarray, tau: float) -> np.ndarray:
    """
    Entrywise shrinkage sign(M) * max(|M| - tau, 0), the prox of tau ||.||_1.

    Examples:
        >>> float(soft_threshold(np.array(3.0), 1.0))
        2.0
    """
    if tau < 0:
        raise InvalidParameterError(f"Threshold must be non-negative, got {tau}")
    M = np.asarray(M, dtype=float)
    return np.sign(M) * np.maximum(np.abs(M) - tau, 0.0)


def _svd(M: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return scipy.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError:
        logging.warning("gesdd SVD failed, retrying with gesvd")
    try:
        return scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesvd")
    except np.linalg.LinAlgError as e:
        raise SVDFailureError(f"SVD did not converge: {e}") from e


def _svt_with_values(M: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    U, s, Vt = _svd(M)
    shrunk = np.maximum(s - tau, 0.0)
    keep = shrunk > 0
    return (U[:, keep] * shrunk[keep]) @ Vt[keep, :], shrunk[keep]


def svt(M: np.ndarray, tau: float) -> np.ndarray:
    """
    Singular value thresholding U softdiag(Sigma, tau) V^T, the prox of
    tau ||.||_*.

    Raises:
        InvalidParameterError: If tau < 0
        SVDFailureError: If no LAPACK driver converges
    """
    if tau < 0:
        raise InvalidParameterError(f"Threshold must be non-negative, got {tau}")
    M = np.asarray(M, dtype=float)
    return _svt_with_values(M, tau)[0]


# ---------------------------------------------------------------------------
# Observation models
# ---------------------------------------------------------------------------


class _FullObservation:
    """Data term for PCP: misfit X - M."""

    def __init__(self, M: np.ndarray):
        self.M = M
        self.scale = float(np.linalg.norm(M, 2)) if M.size else 0.0
        self.data_norm = float(np.linalg.norm(M))
        self.norm_sq = 1.0

    def gradient(self, X: np.ndarray) -> np.ndarray:
        return X - self.M

    def misfit(self, X: np.ndarray) -> Tuple[float, float]:
        """Return (relative raw residual, squared whitened misfit)."""
        diff = X - self.M
        sq = float(np.vdot(diff, diff))
        return np.sqrt(sq) / self.data_norm, sq


class _CompressiveObservation:
    """Data term for CPCP, whitened so that its gradient is P_Q[X] - P_Q[M]."""

    def __init__(self, ens, d: np.ndarray, power_iters: int):
        self.ens = ens
        self.d = d
        self.target = ens.backproject(d)
        self.scale = float(np.linalg.norm(self.target, 2))
        self.data_norm = float(np.linalg.norm(d))
        self.norm_sq = operator_norm_sq(ens, iters=power_iters, whitened=True)

    def gradient(self, X: np.ndarray) -> np.ndarray:
        return self.ens.project_span(X) - self.target

    def misfit(self, X: np.ndarray) -> Tuple[float, float]:
        v = self.ens.apply(X) - self.d
        raw = float(np.linalg.norm(v)) / self.data_norm
        if self.ens.full_span:
            diff = X - self.target
            return raw, float(np.vdot(diff, diff))
        return raw, float(v @ self.ens.gram_solve(v))


def _diverged(residual: float, best_residual: float, floor: float) -> bool:
    """Residual has grown DIVERGENCE_FACTOR times above its running minimum."""
    return residual > floor and residual > DIVERGENCE_FACTOR * best_residual


def _accelerated_continuation(
    model, shape: Tuple[int, int], lam: float, cfg: SolverConfig
) -> SolveResult:
    """Shared APG-with-continuation loop for both observation models."""
    L = np.zeros(shape)
    S = np.zeros(shape)

    mu0 = cfg.mu0_scale * model.scale
    if mu0 == 0.0:
        logging.info("Zero data: returning the zero decomposition")
        return SolveResult(
            L=L,
            S=S,
            iterations=0,
            final_mu=0.0,
            residual_history=[],
            status=SolveStatus.CONVERGED,
            dual=np.zeros(shape),
        )

    mu = mu0
    mu_min = mu0 * cfg.mu_min_ratio
    # (L, S) -> (Q*Q[L+S], Q*Q[L+S]) has twice the largest eigenvalue of Q*Q.
    lipschitz = 2.0 * model.norm_sq

    L_prev, S_prev = L, S
    t_k, t_prev = 1.0, 1.0
    prev_objective = np.inf
    best_residual = np.inf
    history: List[float] = []
    stage_residuals: List[float] = []
    stage_iters = 0
    last_stage = np.inf
    status = SolveStatus.MAX_ITERS
    objective = np.inf

    for iteration in range(1, cfg.max_iters + 1):
        momentum = (t_prev - 1.0) / t_k
        Y_L = L + momentum * (L - L_prev)
        Y_S = S + momentum * (S - S_prev)

        grad = model.gradient(Y_L + Y_S) / mu
        step = cfg.step_safety * mu / lipschitz
        L_new, sing_vals = _svt_with_values(Y_L - step * grad, step)
        S_new = soft_threshold(Y_S - step * grad, step * lam)

        residual, misfit_sq = model.misfit(L_new + S_new)
        history.append(residual)
        objective = (
            float(sing_vals.sum())
            + lam * float(np.abs(S_new).sum())
            + misfit_sq / (2.0 * mu)
        )

        if objective > prev_objective:
            # Restart momentum on objective increase.
            t_k, t_prev = 1.0, 1.0
        else:
            t_prev, t_k = t_k, (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k)) / 2.0
        prev_objective = objective

        step_norm = np.sqrt(
            np.vdot(L_new - L, L_new - L) + np.vdot(S_new - S, S_new - S)
        )
        iterate_norm = np.sqrt(np.vdot(L, L) + np.vdot(S, S))
        change = float(step_norm) / max(1.0, float(iterate_norm))
        L_prev, S_prev = L, S
        L, S = L_new, S_new
        stage_iters += 1

        best_residual = min(best_residual, residual)
        if _diverged(residual, best_residual, cfg.divergence_floor):
            logging.warning(
                f"Solver diverged at iteration {iteration}: residual {residual:.3e} "
                f"vs best {best_residual:.3e}"
            )
            status = SolveStatus.DIVERGED
            break

        if cfg.log_every and iteration % cfg.log_every == 0:
            logging.debug(
                f"iter {iteration}: mu={mu:.3e} residual={residual:.3e} "
                f"change={change:.3e} objective={objective:.6e}"
            )

        regressed = residual > last_stage + STAGE_RESIDUAL_JITTER
        settled = change < cfg.rel_tol and not regressed
        if mu > mu_min:
            if settled or stage_iters >= cfg.stage_max_iters:
                stage_residuals.append(residual)
                mu = max(mu * cfg.continuation_factor, mu_min)
                stage_iters = 0
                prev_objective = np.inf
                last_stage = residual
        elif settled:
            stage_residuals.append(residual)
            status = SolveStatus.CONVERGED
            break

    if status == SolveStatus.MAX_ITERS:
        logging.warning(f"Solver hit max_iters={cfg.max_iters} (mu={mu:.3e})")

    return SolveResult(
        L=L,
        S=S,
        iterations=len(history),
        final_mu=mu,
        residual_history=history,
        status=status,
        stage_residuals=stage_residuals,
        objective=objective,
        dual=-model.gradient(L + S) / mu,
    )


def solve_cpcp(ens, d: np.ndarray, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """
    Solve min ||L||_* + lambda ||S||_1 subject to Q[L + S] = d.

    Args:
        ens: MeasurementEnsemble or StreamedEnsemble
        d: Measurement vector of length q
        cfg: Solver settings (defaults when omitted)

    Returns:
        SolveResult; max-iters and diverged outcomes are reported in status
    """
    cfg = cfg or SolverConfig()
    m, n, q = ens.dims
    d = np.asarray(d, dtype=float)
    if d.shape != (q,):
        raise DimensionMismatchError(f"Expected {q} measurements, got shape {d.shape}")

    lam = cfg.lam_for(m, n)
    logging.debug(f"solve_cpcp: {m}x{n}, q={q}, lambda={lam:.4f}")
    model = _CompressiveObservation(ens, d, cfg.power_iters)
    result = _accelerated_continuation(model, (m, n), lam, cfg)
    logging.info(f"CPCP solve (q={q}): {result.to_json()}")
    return result


def solve_pcp(M: np.ndarray, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """
    Solve min ||L||_* + lambda ||S||_1 subject to L + S = M.

    Args:
        M: Observed matrix
        cfg: Solver settings (defaults when omitted)

    Returns:
        SolveResult
    """
    cfg = cfg or SolverConfig()
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise InvalidParameterError("M must be a finite 2-D matrix")

    lam = cfg.lam_for(*M.shape)
    model = _FullObservation(M)
    result = _accelerated_continuation(model, M.shape, lam, cfg)
    logging.info(f"PCP solve: {result.to_json()}")
    return result


def relative_error(X: np.ndarray, X0: np.ndarray) -> float:
    """||X - X0||_F / ||X0||_F, or ||X||_F when X0 = 0."""
    denom = float(np.linalg.norm(X0))
    err = float(np.linalg.norm(X - X0))
    return err / denom if denom > 0 else err


def is_success(
    result: SolveResult,
    L0: np.ndarray,
    S0: np.ndarray,
    tol: float = DEFAULT_SUCCESS_TOL,
) -> bool:
    """Success means both components are recovered to relative error <= tol."""
    return relative_error(result.L, L0) <= tol and relative_error(result.S, S0) <= tol
