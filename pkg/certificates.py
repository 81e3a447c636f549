#!/usr/bin/env python3
"""
Dual Certificates for PCP and Compressive PCP.

A certificate is a matrix Lambda whose projections onto the tangent subspaces
of the two norms match their anchors (U V^T for the nuclear norm, lambda
sign(S0) for the l1 norm), whose remaining parts are strictly inside the dual
norm balls, and which lies in span(Q). This module scores candidate
certificates, builds the classical PCP certificate (golfing W^L plus
Neumann-series W^S), moves a certificate into span(Q) with the golfing
scheme, repairs the anchor equations exactly with least-norm corrections,
and checks the optimality conditions for a given decomposition.
"""

import enum
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "common"))
from cpcp_errors import (
    AngleTooLargeError,
    DimensionMismatchError,
    InsufficientMeasurementsError,
    InvalidParameterError,
    NeumannDivergenceError,
    NoConvergenceError,
    PartitionError,
)
from seed_utils import SeedLike, make_rng

from instances import LowRankInstance, SparseInstance
from operators import (
    Complement,
    DirectSum,
    ExplicitBasis,
    MeasurementEnsemble,
    NuclearTangent,
    SubspaceDescriptor,
    Support,
    cross_gram_norm,
    span_descriptor,
    subspace_angle,
)

ANCHOR_TOL = 1e-10
NEUMANN_TERM_TOL = 1e-14
NEUMANN_MAX_TERMS = 10_000
NEUMANN_ALARM = 1e-10
ANGLE_MARGIN = 1e-6
RANK_CUTOFF = 1e-6
SUPPORT_CUTOFF = 1e-6
DEFAULT_VERIFY_TOL = 1e-6
EXPECTED_NORM_BATCH = 1000
# Acceptance constant for the golfing beta allowance; the bound leaves it open.
BETA_DEGRADATION_C = 25.0


class DualNorm(enum.Enum):
    """Dual norms of the two decomposable norms in use."""

    OPERATOR = "operator-norm"
    MAX_ABS = "max-abs"


def dual_norm_value(tag: DualNorm, M: np.ndarray) -> float:
    """Evaluate the tagged dual norm of M."""
    if M.size == 0:
        return 0.0
    if tag == DualNorm.OPERATOR:
        return float(scipy.linalg.svdvals(M)[0])
    return float(np.max(np.abs(M)))


@dataclass(eq=False)
class DecomposableData:
    """Subspace T_i, anchor S_i, dual norm tag and weight lambda_i of one term."""

    subspace: SubspaceDescriptor
    anchor: np.ndarray
    dual_norm: DualNorm
    weight: float

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=float)
        if self.weight <= 0:
            raise InvalidParameterError(f"Term weight must be positive: {self.weight}")
        if self.anchor.shape != tuple(self.subspace.shape):
            raise DimensionMismatchError(
                f"Anchor shape {self.anchor.shape} != subspace {self.subspace.shape}"
            )
        off = np.linalg.norm(self.subspace.project_complement(self.anchor))
        if off > ANCHOR_TOL * max(1.0, float(np.linalg.norm(self.anchor))):
            raise InvalidParameterError(f"Anchor leaves its subspace by {off:.2e}")
        expected = {NuclearTangent: DualNorm.OPERATOR, Support: DualNorm.MAX_ABS}
        wanted = expected.get(type(self.subspace))
        if wanted is not None and wanted != self.dual_norm:
            raise InvalidParameterError(
                f"{type(self.subspace).__name__} pairs with {wanted.value}, "
                f"not {self.dual_norm.value}"
            )


@dataclass
class CertificateReport:
    """Inexactness scores of a candidate certificate."""

    alphas: List[float]
    betas: List[float]
    q_residual: float
    alpha: float
    beta: float

    def within(self, alpha: float, beta: float) -> bool:
        """alpha-score at most alpha and beta-score at most beta."""
        return self.alpha <= alpha and self.beta <= beta

    def to_row(self, prefix: str = "") -> Dict[str, float]:
        row = {f"{prefix}alpha_{i}": a for i, a in enumerate(self.alphas)}
        row.update({f"{prefix}beta_{i}": b for i, b in enumerate(self.betas)})
        row[f"{prefix}alpha"] = self.alpha
        row[f"{prefix}beta"] = self.beta
        row[f"{prefix}q_residual"] = self.q_residual
        return row


def pcp_terms(
    low: LowRankInstance, sparse: SparseInstance, lam: float
) -> List[DecomposableData]:
    """The nuclear-norm and l1 terms of PCP at the planted pair (L0, S0)."""
    return [
        DecomposableData(
            subspace=NuclearTangent(low.U, low.V),
            anchor=low.U @ low.V.T,
            dual_norm=DualNorm.OPERATOR,
            weight=1.0,
        ),
        DecomposableData(
            subspace=Support(sparse.mask),
            anchor=sparse.signs,
            dual_norm=DualNorm.MAX_ABS,
            weight=lam,
        ),
    ]


def checked_angle(A: SubspaceDescriptor, B: SubspaceDescriptor, seed: SeedLike = 0):
    """
    ||P_A P_B|| by power iteration, or by the exact cross-Gram singular value
    when the iteration stalls on a near-degenerate spectrum.
    """
    try:
        return subspace_angle(A, B, seed=seed)
    except NoConvergenceError as e:
        logging.warning(f"{e}; falling back to the cross-Gram singular value")
        return cross_gram_norm(A, B)


def span_complement_angle(ens: MeasurementEnsemble, W: SubspaceDescriptor) -> float:
    """
    Exact ||P_Q_perp P_W|| from the whitened ensemble rows.

    For unit X in W, ||P_Q_perp X||^2 = 1 - ||P_Q X||^2, so the norm is
    sqrt(1 - s_min^2) with s_min the smallest singular value of B_Q B_W^T.
    """
    basis = W.basis()
    if basis.shape[0] == 0:
        return 0.0
    if basis.shape[0] > ens.q:
        return 1.0
    s_min = float(scipy.linalg.svdvals(basis @ ens.orthonormal_rows().T)[-1])
    return float(np.sqrt(max(0.0, 1.0 - s_min * s_min)))


def score_certificate(
    Lambda: np.ndarray,
    terms: Sequence[DecomposableData],
    ens: Optional[MeasurementEnsemble] = None,
) -> CertificateReport:
    """
    Score Lambda as an (alpha, beta)-inexact certificate.

    alpha_i = ||P_Ti Lambda - lambda_i S_i||_F,
    beta_i = ||P_Ti_perp Lambda||_(i)^* / lambda_i,
    q_residual = ||Lambda - P_Q Lambda||_F (0 without an ensemble).
    """
    Lambda = np.asarray(Lambda, dtype=float)
    alphas, betas = [], []
    for term in terms:
        if Lambda.shape != tuple(term.subspace.shape):
            raise DimensionMismatchError(
                f"Lambda shape {Lambda.shape} != term shape {term.subspace.shape}"
            )
        inside = term.subspace.project(Lambda)
        alphas.append(float(np.linalg.norm(inside - term.weight * term.anchor)))
        outside = Lambda - inside
        betas.append(dual_norm_value(term.dual_norm, outside) / term.weight)

    q_residual = 0.0
    if ens is not None:
        q_residual = float(np.linalg.norm(Lambda - ens.project_span(Lambda)))

    return CertificateReport(
        alphas=alphas,
        betas=betas,
        q_residual=q_residual,
        alpha=max(alphas, default=0.0),
        beta=max(betas, default=0.0),
    )


def neumann_series(
    step: Callable[[np.ndarray], np.ndarray],
    start: np.ndarray,
    term_tol: float = NEUMANN_TERM_TOL,
    max_terms: int = NEUMANN_MAX_TERMS,
) -> Tuple[np.ndarray, int]:
    """
    Sum start + step(start) + step(step(start)) + ... until a term is tiny.

    Raises:
        NeumannDivergenceError: If the last term at the cap is above 1e-10
    """
    total = start.copy()
    term = start
    count = 1
    while count < max_terms and np.linalg.norm(term) >= term_tol:
        term = step(term)
        total += term
        count += 1
    last = float(np.linalg.norm(term))
    if last > NEUMANN_ALARM:
        raise NeumannDivergenceError(
            f"Neumann series still at term norm {last:.3e} after {count} terms"
        )
    return total, count


# ---------------------------------------------------------------------------
# PCP certificate construction
# ---------------------------------------------------------------------------


@dataclass
class PCPCertificate:
    """Lambda_PCP = U V^T + W^L + W^S with its construction diagnostics."""

    lambda_pcp: np.ndarray
    WL: np.ndarray
    WS: np.ndarray
    j0: int
    bernoulli_q: float
    z_norms: List[float] = field(default_factory=list)
    neumann_terms: int = 0
    support_angle: float = 0.0

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter((self.lambda_pcp, self.WL, self.WS))


def default_steps(m: int, n: int) -> int:
    """ceil(3 log2 m) with m the larger dimension."""
    return max(1, math.ceil(3 * math.log2(max(m, n, 2))))


def classic_steps(m: int, n: int, r: int) -> int:
    """
    Fewest golfing steps j0 with 2^-j0 sqrt(r) <= 1/(4 sqrt(m)).

    This is the shorter schedule of the original PCP construction, which only
    asks for a (1/(4 sqrt(m)), 1/2)-inexact certificate.
    """
    if r < 1:
        raise InvalidParameterError(f"rank must be at least 1, got {r}")
    return max(1, math.ceil(math.log2(4.0 * math.sqrt(max(m, n) * r))))


def classic_tolerances(m: int, n: int) -> Tuple[float, float]:
    """(alpha, beta) = (1/(4 sqrt(m)), 1/2) of the original PCP certificate."""
    return 1.0 / (4.0 * math.sqrt(max(m, n))), 0.5


def strict_tolerances(m: int, n: int) -> Tuple[float, float]:
    """(alpha, beta) = (1/m^2, 1/4), the tightened PCP certificate."""
    return 1.0 / max(m, n) ** 2, 0.25


def _golfing_partition(
    complement_mask: np.ndarray, j0: int, q: float, rng: np.random.Generator
) -> np.ndarray:
    """
    Sets Upsilon_1..Upsilon_j0, iid Bernoulli(q), conditioned on covering
    exactly the complement of the support.
    """
    members = rng.random((j0,) + complement_mask.shape) < q
    members &= complement_mask
    uncovered = complement_mask & ~members.any(axis=0)
    while uncovered.any():
        redraw = rng.random((j0, int(uncovered.sum()))) < q
        members[:, uncovered] = redraw
        uncovered = complement_mask & ~members.any(axis=0)
    return members


def build_pcp_certificate(
    low: LowRankInstance,
    sparse: SparseInstance,
    lam: Optional[float] = None,
    j0: Optional[int] = None,
    seed: SeedLike = 0,
) -> PCPCertificate:
    """
    Build the PCP dual certificate U V^T + W^L + W^S.

    W^L comes from golfing over j0 random subsets of the complement of the
    support: Y_j = Y_{j-1} - q^-1 P_Upsilon_j Z_{j-1}, Z_j = P_T Y_j - U V^T,
    W^L = P_T_perp Y_j0. W^S is the least-norm solution of P_T W = 0,
    P_Omega W = lambda sign(S0), summed as a Neumann series.

    Args:
        low: Planted low-rank component (must be nonzero)
        sparse: Planted sparse component
        lam: l1 weight (default 1/sqrt(m), m the larger dimension)
        j0: Golfing steps (default ceil(3 log2 m))
        seed: Seed for the Bernoulli partition

    Returns:
        PCPCertificate, which also unpacks as (Lambda_pcp, W^L, W^S)

    Raises:
        InvalidParameterError: If L0 = 0 or j0 < 1
        AngleTooLargeError: If ||P_Omega P_T|| >= 1 - 1e-6
        PartitionError: If the Bernoulli parameter falls outside (0, 1]
    """
    m, n = low.shape
    if low.rank == 0 or not np.any(low.L):
        raise InvalidParameterError("The certificate needs a nonzero L0")
    if sparse.mask.shape != (m, n):
        raise DimensionMismatchError("L0 and S0 have different shapes")
    lam = lam if lam is not None else 1.0 / np.sqrt(max(m, n))
    j0 = j0 if j0 is not None else default_steps(m, n)
    if j0 < 1:
        raise InvalidParameterError(f"j0 must be at least 1, got {j0}")

    tangent = NuclearTangent(low.U, low.V)
    support = Support(sparse.mask)
    UVt = low.U @ low.V.T

    angle = 0.0
    if support.dim:
        angle = checked_angle(support, tangent, seed=seed)
        if angle >= 1.0 - ANGLE_MARGIN:
            raise AngleTooLargeError(f"||P_Omega P_T|| = {angle:.6f} is too close to 1")

    # rho = (1 - q)^j0; an instance built from a bare matrix carries rho = 0,
    # in which case the realized fraction stands in for it.
    rho = sparse.rho if sparse.rho > 0 else sparse.realized_fraction
    bernoulli_q = 1.0 - rho ** (1.0 / j0)
    if not 0.0 < bernoulli_q <= 1.0 or not np.isfinite(bernoulli_q):
        raise PartitionError(f"Bernoulli parameter {bernoulli_q} outside (0, 1]")

    rng = make_rng(seed)
    partition = _golfing_partition(~sparse.mask, j0, bernoulli_q, rng)

    Y = np.zeros((m, n))
    Z = -UVt
    z_norms = [float(np.linalg.norm(Z))]
    for j in range(j0):
        Y = Y - np.where(partition[j], Z, 0.0) / bernoulli_q
        Z = tangent.project(Y) - UVt
        z_norms.append(float(np.linalg.norm(Z)))
    WL = tangent.project_complement(Y)

    WS = np.zeros((m, n))
    terms = 0
    if support.dim:

        def compress(X: np.ndarray) -> np.ndarray:
            return support.project(tangent.project(support.project(X)))

        series, terms = neumann_series(compress, lam * sparse.signs)
        WS = tangent.project_complement(series)

    logging.info(
        f"PCP certificate: j0={j0}, q={bernoulli_q:.4f}, ||Z_j0||_F={z_norms[-1]:.3e}, "
        f"||P_Omega P_T||={angle:.4f}, Neumann terms={terms}"
    )
    return PCPCertificate(
        lambda_pcp=UVt + WL + WS,
        WL=WL,
        WS=WS,
        j0=j0,
        bernoulli_q=bernoulli_q,
        z_norms=z_norms,
        neumann_terms=terms,
        support_angle=angle,
    )


# ---------------------------------------------------------------------------
# Golfing upgrade into span(Q)
# ---------------------------------------------------------------------------


@dataclass
class GolfingResult:
    """Output of the golfing upgrade."""

    lambda_star: np.ndarray
    error_norms: List[float]
    contraction_ok: bool
    steps: int
    gamma: int
    subspace_dim: int

    def __iter__(self):
        return iter((self.lambda_star, self.error_norms))


def golfing_sum_descriptor(
    Lambda_hat: np.ndarray, terms: Sequence[DecomposableData]
) -> DirectSum:
    """S = T_1 + ... + T_tau + span(Lambda_hat)."""
    parts: List[SubspaceDescriptor] = [t.subspace for t in terms]
    norm = float(np.linalg.norm(Lambda_hat))
    if norm > 0:
        parts.append(ExplicitBasis((Lambda_hat / norm)[np.newaxis], Lambda_hat.shape))
    return DirectSum(parts)


def golfing_upgrade(
    Lambda_hat: np.ndarray,
    terms: Sequence[DecomposableData],
    ens: MeasurementEnsemble,
    k: Optional[int] = None,
) -> GolfingResult:
    """
    Move an inexact certificate into span(Q) with the golfing scheme.

    Starting from Lambda^(0) = 0 and E^(0) = -Lambda_hat, each step uses a
    fresh block of gamma = floor(q/k) ensemble matrices:
    Lambda^(j) = Lambda^(j-1) - (mn/gamma) A_j E^(j-1) and
    E^(j) = P_S Lambda^(j) - Lambda_hat.

    Args:
        Lambda_hat: Inexact certificate
        terms: Decomposable terms whose subspaces enter S
        ens: Measurement ensemble
        k: Number of blocks (default ceil(3 log2 m))

    Returns:
        GolfingResult (unpacks as (Lambda_star, error_norms))

    Raises:
        InvalidParameterError: If terms is empty
        InsufficientMeasurementsError: If gamma < 1
    """
    if not terms:
        raise InvalidParameterError("golfing_upgrade needs at least one term")
    Lambda_hat = np.asarray(Lambda_hat, dtype=float)
    m, n, q = ens.dims
    if Lambda_hat.shape != (m, n):
        raise DimensionMismatchError("Lambda_hat does not match the ensemble")
    k = k if k is not None else default_steps(m, n)
    gamma = q // k if k > 0 else 0
    if gamma < 1:
        raise InsufficientMeasurementsError(
            f"q={q} measurements cannot fill k={k} golfing blocks"
        )

    subspace = golfing_sum_descriptor(Lambda_hat, terms)
    if not np.any(Lambda_hat):
        return GolfingResult(np.zeros((m, n)), [0.0] * (k + 1), True, k, gamma, 0)

    Lambda = np.zeros((m, n))
    E = -Lambda_hat
    error_norms = [float(np.linalg.norm(E))]
    for j in range(k):
        block = ens.block(range(j * gamma, (j + 1) * gamma))
        Lambda = Lambda - block.apply_normalized(E)
        E = subspace.project(Lambda) - Lambda_hat
        error_norms.append(float(np.linalg.norm(E)))

    contraction_ok = all(b <= a for a, b in zip(error_norms, error_norms[1:]))
    if not contraction_ok:
        logging.warning(f"Golfing error did not contract monotonically: {error_norms}")
    logging.info(
        f"Golfing upgrade: k={k}, gamma={gamma}, dim S={subspace.dim}, "
        f"||E^(k)||/||E^(0)||={error_norms[-1] / error_norms[0]:.3e}"
    )
    return GolfingResult(Lambda, error_norms, contraction_ok, k, gamma, subspace.dim)


def beta_degradation_allowance(
    Lambda_hat: np.ndarray,
    terms: Sequence[DecomposableData],
    q: int,
    constant: float = BETA_DEGRADATION_C,
    nu_trials: int = 200,
    seed: SeedLike = 0,
) -> float:
    """
    How far golfing may raise beta:
    C * max_i (nu_i + sqrt(log m)) / lambda_i * sqrt(||Lambda_hat||_F^2 log m / q),
    with nu_i = E||G||_(i)^* for a standard Gaussian G, estimated by Monte-Carlo.
    """
    if q < 1 or not terms:
        raise InvalidParameterError("Need q >= 1 and at least one term")
    m, n = Lambda_hat.shape
    log_m = math.log(max(m, n, 2))
    worst = 0.0
    for term in terms:
        nu, _ = expected_dual_norm(term.dual_norm, m, n, nu_trials, seed)
        worst = max(worst, (nu + math.sqrt(log_m)) / term.weight)
    frob_sq = float(np.vdot(Lambda_hat, Lambda_hat))
    return constant * worst * math.sqrt(frob_sq * log_m / q)


def relaxed_certificate_check(
    report: CertificateReport, angle: float, m: int, n: int
) -> Tuple[bool, float]:
    """
    Weaker sufficient condition for CPCP recovery: beta <= 1/2 and
    alpha < (1 - ||P_Q_perp P_(T+Omega)||^2) / (4 sqrt(m)).

    Returns:
        (passed, alpha limit)
    """
    if not 0.0 <= angle <= 1.0:
        raise InvalidParameterError(f"angle must lie in [0, 1], got {angle}")
    limit = (1.0 - angle * angle) / (4.0 * math.sqrt(max(m, n)))
    return report.beta <= 0.5 and report.alpha < limit, limit


# ---------------------------------------------------------------------------
# Exact upgrade
# ---------------------------------------------------------------------------


def least_norm_correction(
    Lambda_hat: np.ndarray, terms: Sequence[DecomposableData]
) -> np.ndarray:
    """
    Least-norm Delta_0 in T_1 + ... + T_tau with P_Ti Delta = lambda_i S_i -
    P_Ti Lambda_hat for every i, solved on the stacked orthonormal bases.
    """
    bases = [t.subspace.basis() for t in terms]
    stacked = np.vstack(bases)
    if stacked.shape[0] == 0:
        return np.zeros_like(Lambda_hat)
    rhs = np.concatenate(
        [
            basis @ (t.weight * t.anchor - t.subspace.project(Lambda_hat)).ravel()
            for basis, t in zip(bases, terms)
        ]
    )
    coeffs, *_ = scipy.linalg.lstsq(stacked @ stacked.T, rhs)
    return (coeffs @ stacked).reshape(Lambda_hat.shape)


def correction_norm_bound(residual_norms: Sequence[float], max_angle: float) -> float:
    """sqrt(sum_i r_i^2 / (1 - (tau - 1) max_{i != j} ||P_Ti P_Tj||))."""
    tau = len(residual_norms)
    denom = 1.0 - (tau - 1) * max_angle
    if denom <= 0:
        return float("inf")
    return float(np.sqrt(sum(r * r for r in residual_norms) / denom))


def stacked_gram_min_eig(subspaces: Sequence[SubspaceDescriptor]) -> float:
    """Smallest eigenvalue of the Gram matrix of the stacked bases."""
    stacked = np.vstack([s.basis() for s in subspaces])
    if stacked.shape[0] == 0:
        return 1.0
    return float(scipy.linalg.eigvalsh(stacked @ stacked.T)[0])


def exact_upgrade(
    Lambda_hat: np.ndarray,
    terms: Sequence[DecomposableData],
    ens: Optional[MeasurementEnsemble] = None,
) -> np.ndarray:
    """
    Repair an inexact certificate so the anchor equations hold exactly.

    Delta_0 is the least-norm solution of the anchor equations inside the
    sum of the term subspaces; Delta_star = P_Q sum_i (P_W P_Q_perp P_W)^i
    Delta_0 is the least-norm matrix in span(Q) with the same projection onto
    W = T_1 + ... + T_tau. The result is P_Q Lambda_hat + Delta_star.

    Args:
        Lambda_hat: Inexact certificate (projected onto span(Q) first)
        terms: Decomposable terms
        ens: Measurement ensemble; None means every entry is observed

    Returns:
        Lambda with P_Ti Lambda = lambda_i S_i and P_Q_perp Lambda = 0

    Raises:
        AngleTooLargeError: If ||P_Ti P_Tj|| >= 1/(tau - 1) for some pair, or
            ||P_W P_Q_perp|| is too close to 1
        NeumannDivergenceError: If the correction series does not converge
    """
    Lambda_hat = np.asarray(Lambda_hat, dtype=float)
    tau = len(terms)
    if tau >= 2:
        limit = 1.0 / (tau - 1)
        for i in range(tau):
            for j in range(i + 1, tau):
                angle = checked_angle(terms[i].subspace, terms[j].subspace)
                if angle >= limit - ANGLE_MARGIN:
                    raise AngleTooLargeError(
                        f"||P_T{i} P_T{j}|| = {angle:.6f} >= 1/(tau-1) = {limit:.6f}"
                    )

    partial = Lambda_hat
    if ens is not None and not ens.full_span:
        partial = ens.project_span(Lambda_hat)
        leak = float(np.linalg.norm(Lambda_hat - partial))
        if leak > NEUMANN_ALARM:
            logging.debug(f"Lambda_hat had {leak:.3e} outside span(Q); dropped")

    delta0 = least_norm_correction(partial, terms)
    if ens is None or ens.full_span:
        return partial + delta0

    total = DirectSum([t.subspace for t in terms])
    q_perp = Complement(span_descriptor(ens))
    angle = span_complement_angle(ens, total)
    if angle >= 1.0 - ANGLE_MARGIN:
        raise AngleTooLargeError(f"||P_W P_Q_perp|| = {angle:.6f} is too close to 1")

    def compress(X: np.ndarray) -> np.ndarray:
        return total.project(q_perp.project(total.project(X)))

    series, count = neumann_series(compress, delta0)
    delta_star = ens.project_span(series)
    Lambda = partial + delta_star

    worst = max(
        float(np.linalg.norm(t.subspace.project(Lambda) - t.weight * t.anchor))
        for t in terms
    )
    if worst > 1e-9:
        logging.warning(f"exact_upgrade anchor residual {worst:.3e} above 1e-9")
    logging.debug(f"exact_upgrade: Neumann terms={count}, ||P_W P_Q_perp||={angle:.4f}")
    return Lambda


# ---------------------------------------------------------------------------
# Optimality verdict
# ---------------------------------------------------------------------------


@dataclass
class Verdict:
    """Per-condition outcome of the optimality check."""

    conditions: Dict[str, bool]
    margins: Dict[str, float]
    rank: int
    support_size: int

    @property
    def passed(self) -> bool:
        return all(self.conditions.values())

    @property
    def failed(self) -> List[str]:
        return [name for name, ok in self.conditions.items() if not ok]

    def to_row(self, prefix: str = "") -> Dict[str, object]:
        row: Dict[str, object] = {f"{prefix}passed": self.passed}
        row.update({f"{prefix}{k}": v for k, v in self.conditions.items()})
        row.update({f"{prefix}margin_{k}": v for k, v in self.margins.items()})
        return row


def decomposition_terms(
    L: np.ndarray, S: np.ndarray, lam: float
) -> List[DecomposableData]:
    """Terms read off a numerical pair (L, S) with relative cutoffs."""
    U, s, Vt = scipy.linalg.svd(L, full_matrices=False)
    r = int(np.sum(s > RANK_CUTOFF * s[0])) if s.size and s[0] > 0 else 0
    U, V = U[:, :r], Vt[:r, :].T

    s_max = float(np.max(np.abs(S))) if S.size else 0.0
    mask = np.abs(S) > SUPPORT_CUTOFF * s_max
    if s_max == 0:
        mask = np.zeros(S.shape, dtype=bool)
    signs = np.where(mask, np.sign(S), 0.0)

    return [
        DecomposableData(NuclearTangent(U, V), U @ V.T, DualNorm.OPERATOR, 1.0),
        DecomposableData(Support(mask), signs, DualNorm.MAX_ABS, lam),
    ]


def verify_optimality(
    L: np.ndarray,
    S: np.ndarray,
    Lambda: np.ndarray,
    ens: Optional[MeasurementEnsemble] = None,
    tol: float = DEFAULT_VERIFY_TOL,
    lam: Optional[float] = None,
) -> Verdict:
    """
    Check the sufficient conditions for (L, S) to be the unique optimum.

    Conditions: P_T Lambda = U V^T and P_Omega Lambda = lambda sign(S) within
    tol; ||P_T_perp Lambda|| < 1 and ||P_Omega_perp Lambda||_inf < lambda
    strictly; P_Q_perp Lambda = 0 within tol (when an ensemble is given);
    T and Omega independent. Failed conditions are reported, never raised.
    lambda defaults to 1/sqrt(m) with m the larger dimension.
    """
    L = np.asarray(L, dtype=float)
    S = np.asarray(S, dtype=float)
    Lambda = np.asarray(Lambda, dtype=float)
    if not (np.all(np.isfinite(L)) and np.all(np.isfinite(S))):
        raise InvalidParameterError("L and S must be finite")
    m, n = L.shape
    lam = lam if lam is not None else 1.0 / np.sqrt(max(m, n))

    terms = decomposition_terms(L, S, lam)
    report = score_certificate(Lambda, terms, ens)
    tangent, support = terms[0].subspace, terms[1].subspace

    conditions = {
        "anchor_L": report.alphas[0] <= tol,
        "anchor_S": report.alphas[1] <= tol,
        "dual_L": report.betas[0] < 1.0,
        "dual_S": report.betas[1] < 1.0,
        "span_Q": report.q_residual <= tol,
        "independent": DirectSum([tangent, support]).independent,
    }
    margins = {
        "anchor_L": tol - report.alphas[0],
        "anchor_S": tol - report.alphas[1],
        "dual_L": terms[0].weight * (1.0 - report.betas[0]),
        "dual_S": terms[1].weight * (1.0 - report.betas[1]),
        "span_Q": tol - report.q_residual,
    }
    verdict = Verdict(conditions, margins, tangent.rank, support.dim)
    if verdict.passed:
        logging.info(f"Verified: rank {tangent.rank}, |Omega|={support.dim}")
    else:
        logging.info(f"Optimality check failed: {verdict.failed}")
    return verdict


# ---------------------------------------------------------------------------
# Expected dual norms
# ---------------------------------------------------------------------------


def expected_dual_norm(
    tag: DualNorm, m: int, n: int, trials: int, seed: SeedLike = 0
) -> Tuple[float, float]:
    """
    Monte-Carlo estimate of E||G||^* for a standard Gaussian m x n matrix.

    Returns:
        (estimate, analytic upper bound): the bound is sqrt(m) + sqrt(n) for
        the operator norm and 3 sqrt(2 log m) for max-abs, with m the larger
        side clamped at 2
    """
    if trials < 1:
        raise InvalidParameterError(f"trials must be at least 1, got {trials}")
    rng = make_rng(seed)
    total = 0.0
    remaining = trials
    while remaining:
        batch = min(remaining, EXPECTED_NORM_BATCH)
        G = rng.standard_normal((batch, m, n))
        if tag == DualNorm.OPERATOR:
            values = np.linalg.svd(G, compute_uv=False)[:, 0]
        else:
            values = np.max(np.abs(G), axis=(1, 2))
        total += float(values.sum())
        remaining -= batch

    if tag == DualNorm.OPERATOR:
        bound = np.sqrt(m) + np.sqrt(n)
    else:
        bound = 3.0 * np.sqrt(2.0 * np.log(max(m, n, 2)))
    return total / trials, float(bound)
