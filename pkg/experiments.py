#!/usr/bin/env python3
"""
CPCP Experiments - Phase-transition sweeps, certificate audits and lemma checks.

Subcommands:
    sweep   Seeded (rank, sparsity) phase-transition sweep; writes phase.csv,
            phase.pgm, trials.csv and config.json into --out
    audit   Certificate pipeline audit, one CSV row per trial
    lemmas  Monte-Carlo checks of the golfing-block concentration bounds
    solve   One-off decomposition of a matrix supplied as CSV

Exit codes: 0 on completion, 2 on precondition refusal, 1 on I/O error.

Usage:
    python3 experiments.py sweep --m 30 --n 30 --p 450 --trials 10 --out out/
    python3 experiments.py audit --m 40 --n 40 --r 2 --rho 0.02 --out audit.csv
    python3 experiments.py lemmas --seed 1 --out lemmas.csv
    python3 experiments.py solve --input M.csv --p 100 --seed 3
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from dotenv import dotenv_values

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "common"))
from cpcp_errors import CPCPError, InvalidParameterError, MemoryCapExceededError
from matrix_io import read_matrix_csv, write_matrix_csv
from seed_utils import SeedLike, child_seed, make_rng

from certificates import (
    DualNorm,
    beta_degradation_allowance,
    build_pcp_certificate,
    classic_steps,
    classic_tolerances,
    exact_upgrade,
    expected_dual_norm,
    golfing_upgrade,
    pcp_terms,
    relaxed_certificate_check,
    score_certificate,
    span_complement_angle,
    strict_tolerances,
    verify_optimality,
)
from instances import DEFAULT_MAGNITUDE, gen_low_rank, gen_sparse
from operators import (
    STREAM_CHUNK_ROWS,
    DirectSum,
    ExplicitBasis,
    MeasurementEnsemble,
    StreamedEnsemble,
)
from solvers import (
    SolverConfig,
    SolveResult,
    is_success,
    relative_error,
    solve_cpcp,
    solve_pcp,
)

DEFAULT_MEM_CAP = 4 * 1024**3
DEFAULT_LOG_FILE = "cpcp.log"
CSV_COLUMNS = [
    "rank",
    "sparsity",
    "successes",
    "trials",
    "mean_rel_err_L",
    "mean_rel_err_S",
    "mean_iters",
]
TRIAL_COLUMNS = [
    "rank",
    "sparsity",
    "trial",
    "seed",
    "realized_sparsity",
    "rel_err_L",
    "rel_err_S",
    "iterations",
    "status",
    "success",
]
PGM_MAXVAL = 255

# Lemma check defaults: 15 x 15 matrices, 20-dimensional random subspace.
LEMMA_M = 15
LEMMA_N = 15
LEMMA_DIM = 20
LEMMA_TRIALS = 100
LEMMA_GAMMA_FACTOR = 32
# The range check needs a block spanning a proper subspace (gamma < mn).
LEMMA_RANGE_FACTOR = 8
J0_RULES = ("default", "classic")
LEMMA_NU_TRIALS = 2000

# Settings file keys -> (SolverConfig field, parser, validity check)
SETTINGS_KEYS = {
    "CPCP_LAMBDA": ("lambda_", float, lambda v: v > 0),
    "CPCP_MU0_SCALE": ("mu0_scale", float, lambda v: v > 0),
    "CPCP_CONTINUATION_FACTOR": ("continuation_factor", float, lambda v: 0 < v < 1),
    "CPCP_MU_MIN_RATIO": ("mu_min_ratio", float, lambda v: 0 < v <= 1),
    "CPCP_MAX_ITERS": ("max_iters", int, lambda v: v >= 1),
    "CPCP_REL_TOL": ("rel_tol", float, lambda v: v > 0),
    "CPCP_STEP_SAFETY": ("step_safety", float, lambda v: 0 < v <= 1),
    "CPCP_STAGE_MAX_ITERS": ("stage_max_iters", int, lambda v: v >= 1),
}


def default_rank_grid(n: int) -> List[int]:
    """Ranks 1..floor(n/2) in steps of ceil(n/20)."""
    return list(range(1, max(1, n // 2) + 1, max(1, math.ceil(n / 20))))


def default_sparsity_grid() -> List[float]:
    """Bernoulli rates 0.02..0.50 in steps of 0.03."""
    return [round(0.02 + 0.03 * i, 4) for i in range(17)]


# ---------------------------------------------------------------------------
# Sweep configuration and results
# ---------------------------------------------------------------------------


@dataclass
class SweepConfig:
    """Phase-transition sweep settings; q = m*n - p measurements per trial."""

    m: int = 30
    n: int = 30
    p: int = 0
    rank_grid: List[int] = field(default_factory=list)
    sparsity_grid: List[float] = field(default_factory=default_sparsity_grid)
    trials: int = 10
    success_tol: float = 1e-3
    solver: SolverConfig = field(default_factory=SolverConfig)
    master_seed: int = 0
    output_dir: str = "output"
    full_scale: bool = False
    mem_cap: int = DEFAULT_MEM_CAP
    workers: int = 1
    magnitude: float = DEFAULT_MAGNITUDE

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise InvalidParameterError(f"Invalid matrix size {self.m}x{self.n}")
        if not 0 <= self.p < self.m * self.n:
            raise InvalidParameterError(
                f"p must satisfy 0 <= p < m*n = {self.m * self.n}, got {self.p}"
            )
        if not self.rank_grid:
            self.rank_grid = default_rank_grid(min(self.m, self.n))
        self.rank_grid = [int(r) for r in self.rank_grid]
        self.sparsity_grid = [float(s) for s in self.sparsity_grid]
        for name, grid in (("rank", self.rank_grid), ("sparsity", self.sparsity_grid)):
            if not grid:
                raise InvalidParameterError(f"The {name} grid is empty")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise InvalidParameterError(f"The {name} grid must be sorted ascending")
        if self.rank_grid[0] < 1 or self.rank_grid[-1] > min(self.m, self.n):
            raise InvalidParameterError(
                f"Ranks must lie in [1, {min(self.m, self.n)}]: {self.rank_grid}"
            )
        if self.sparsity_grid[0] < 0 or self.sparsity_grid[-1] >= 1:
            raise InvalidParameterError("Sparsities must lie in [0, 1)")
        if self.trials < 1:
            raise InvalidParameterError(f"trials must be at least 1, got {self.trials}")
        if self.success_tol <= 0:
            raise InvalidParameterError("success_tol must be positive")
        if self.workers < 1:
            raise InvalidParameterError("workers must be at least 1")
        if isinstance(self.solver, dict):
            self.solver = SolverConfig(**self.solver)

    @property
    def q(self) -> int:
        return self.m * self.n - self.p

    def memory_estimate(self) -> int:
        """Bytes held by one trial's ensemble (and its Gram matrix)."""
        if self.p == 0:
            return 0
        mn = self.m * self.n
        gram = self.q * self.q * 8
        if self.full_scale:
            return gram + min(self.q, STREAM_CHUNK_ROWS) * mn * 8
        return self.q * mn * 8 + gram


@dataclass
class CellResult:
    """Aggregate outcome of one (rank, sparsity) cell."""

    rank: int
    sparsity: float
    successes: int
    trials: int
    mean_rel_err_L: float
    mean_rel_err_S: float
    mean_iters: float


@dataclass
class TrialRecord:
    """Outcome of one seeded trial."""

    rank: int
    sparsity: float
    trial: int
    seed: int
    realized_sparsity: float
    rel_err_L: float
    rel_err_S: float
    iterations: int
    status: str
    success: bool


@dataclass
class SweepResult:
    """Cells in rank-major order, with the configuration that produced them."""

    cells: List[CellResult]
    config_echo: SweepConfig
    trials: List[TrialRecord] = field(default_factory=list)

    def cell(self, rank: int, sparsity: float) -> CellResult:
        for cell in self.cells:
            if cell.rank == rank and cell.sparsity == sparsity:
                return cell
        raise KeyError((rank, sparsity))

    def success_grid(self) -> np.ndarray:
        """Success fractions as a (len(rank_grid), len(sparsity_grid)) array."""
        ranks = self.config_echo.rank_grid
        sparsities = self.config_echo.sparsity_grid
        grid = np.zeros((len(ranks), len(sparsities)))
        for cell in self.cells:
            grid[ranks.index(cell.rank), sparsities.index(cell.sparsity)] = (
                cell.successes / cell.trials
            )
        return grid


# ---------------------------------------------------------------------------
# Sweep runner
# ---------------------------------------------------------------------------


def run_trial(
    cfg: SweepConfig, rank_index: int, sparsity_index: int, trial: int
) -> Tuple[TrialRecord, SolveResult]:
    """Generate, observe and solve one trial from its child seed."""
    rank = cfg.rank_grid[rank_index]
    rho = cfg.sparsity_grid[sparsity_index]
    seed = child_seed(cfg.master_seed, rank_index, sparsity_index, trial)

    low = gen_low_rank(cfg.m, cfg.n, rank, child_seed(seed, 0))
    sparse = gen_sparse(cfg.m, cfg.n, rho, cfg.magnitude, child_seed(seed, 1))
    M = low.L + sparse.S

    if cfg.p == 0:
        result = solve_pcp(M, cfg.solver)
    else:
        if cfg.full_scale:
            ens = StreamedEnsemble(cfg.m, cfg.n, cfg.q, child_seed(seed, 2))
        else:
            ens = MeasurementEnsemble.gaussian(cfg.m, cfg.n, cfg.q, child_seed(seed, 2))
        result = solve_cpcp(ens, ens.apply(M), cfg.solver)

    err_L = relative_error(result.L, low.L)
    err_S = relative_error(result.S, sparse.S)
    record = TrialRecord(
        rank=rank,
        sparsity=rho,
        trial=trial,
        seed=seed,
        realized_sparsity=sparse.realized_fraction,
        rel_err_L=err_L,
        rel_err_S=err_S,
        iterations=result.iterations,
        status=result.status.value,
        success=is_success(result, low.L, sparse.S, cfg.success_tol),
    )
    return record, result


def run_cell(
    cfg: SweepConfig, rank_index: int, sparsity_index: int
) -> Tuple[CellResult, List[TrialRecord]]:
    """Run every trial of one cell; trial failures are recorded, not raised."""
    rank = cfg.rank_grid[rank_index]
    rho = cfg.sparsity_grid[sparsity_index]
    records: List[TrialRecord] = []
    for trial in range(cfg.trials):
        try:
            record, _ = run_trial(cfg, rank_index, sparsity_index, trial)
        except CPCPError as e:
            logging.warning(f"Trial r={rank} rho={rho} t={trial} failed: {e}")
            record = TrialRecord(
                rank=rank,
                sparsity=rho,
                trial=trial,
                seed=child_seed(cfg.master_seed, rank_index, sparsity_index, trial),
                realized_sparsity=float("nan"),
                rel_err_L=float("nan"),
                rel_err_S=float("nan"),
                iterations=0,
                status=f"error: {type(e).__name__}",
                success=False,
            )
        records.append(record)

    finite = [r for r in records if np.isfinite(r.rel_err_L)]
    cell = CellResult(
        rank=rank,
        sparsity=rho,
        successes=sum(r.success for r in records),
        trials=cfg.trials,
        mean_rel_err_L=float(np.mean([r.rel_err_L for r in finite])) if finite else 0.0,
        mean_rel_err_S=float(np.mean([r.rel_err_S for r in finite])) if finite else 0.0,
        mean_iters=float(np.mean([r.iterations for r in records])),
    )
    logging.info(
        f"Cell r={rank} rho={rho}: {cell.successes}/{cell.trials} succeeded, "
        f"mean errors L={cell.mean_rel_err_L:.2e} S={cell.mean_rel_err_S:.2e}, "
        f"mean iters={cell.mean_iters:.0f}"
    )
    return cell, records


def run_sweep(cfg: SweepConfig) -> SweepResult:
    """
    Run the (rank, sparsity) phase-transition sweep.

    Each cell draws its trials from child seeds of (master_seed, rank index,
    sparsity index, trial), so results do not depend on execution order and
    cells may run concurrently on cfg.workers threads.

    Args:
        cfg: Sweep configuration

    Returns:
        SweepResult with cells in rank-major order

    Raises:
        MemoryCapExceededError: If one ensemble would exceed cfg.mem_cap bytes
    """
    estimate = cfg.memory_estimate() * cfg.workers
    if estimate > cfg.mem_cap:
        raise MemoryCapExceededError(
            f"Ensemble storage needs about {estimate / 1024**3:.2f} GiB "
            f"(q={cfg.q}, m*n={cfg.m * cfg.n}, workers={cfg.workers}) which exceeds "
            f"the cap of {cfg.mem_cap / 1024**3:.2f} GiB; lower m, n or workers, "
            f"raise --mem-cap, or use --full-scale"
        )

    jobs = [
        (ri, si)
        for ri in range(len(cfg.rank_grid))
        for si in range(len(cfg.sparsity_grid))
    ]
    logging.info(
        f"Sweep {cfg.m}x{cfg.n}, p={cfg.p} (q={cfg.q}), {len(jobs)} cells x "
        f"{cfg.trials} trials on {cfg.workers} worker(s)"
    )

    slots: Dict[Tuple[int, int], Tuple[CellResult, List[TrialRecord]]] = {}
    with ThreadPoolExecutor(max_workers=cfg.workers, thread_name_prefix="cell") as pool:
        futures = {job: pool.submit(run_cell, cfg, *job) for job in jobs}
        for job, future in futures.items():
            slots[job] = future.result()

    cells = [slots[job][0] for job in jobs]
    trials = [record for job in jobs for record in slots[job][1]]
    return SweepResult(cells=cells, config_echo=cfg, trials=trials)


# ---------------------------------------------------------------------------
# Output emission
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_csv(res: SweepResult, path) -> None:
    """Write the per-cell table; floats keep full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for cell in res.cells:
            writer.writerow([_fmt(getattr(cell, col)) for col in CSV_COLUMNS])
    logging.info(f"Wrote {len(res.cells)} cells to {path}")


def parse_csv(path) -> List[CellResult]:
    """Read a table written by emit_csv back into CellResult records."""
    cells = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"Unexpected CSV header {reader.fieldnames}")
        for row in reader:
            cells.append(
                CellResult(
                    rank=int(row["rank"]),
                    sparsity=float(row["sparsity"]),
                    successes=int(row["successes"]),
                    trials=int(row["trials"]),
                    mean_rel_err_L=float(row["mean_rel_err_L"]),
                    mean_rel_err_S=float(row["mean_rel_err_S"]),
                    mean_iters=float(row["mean_iters"]),
                )
            )
    return cells


def emit_trials_csv(res: SweepResult, path) -> None:
    """Per-trial log including the realized sparsity |Omega|/mn."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRIAL_COLUMNS)
        for record in res.trials:
            writer.writerow([_fmt(getattr(record, col)) for col in TRIAL_COLUMNS])


def pgm_level(successes: int, trials: int) -> int:
    """round(255 * successes / trials), halves rounded up."""
    return (2 * PGM_MAXVAL * successes + trials) // (2 * trials)


def emit_pgm(res: SweepResult, path) -> None:
    """
    Write the success map as a plain P2 image.

    Width is the number of ranks, height the number of sparsities; the top row
    is the largest sparsity, so white (255) means every trial succeeded.
    """
    ranks = res.config_echo.rank_grid
    sparsities = res.config_echo.sparsity_grid
    levels = np.zeros((len(sparsities), len(ranks)), dtype=int)
    for cell in res.cells:
        row = len(sparsities) - 1 - sparsities.index(cell.sparsity)
        levels[row, ranks.index(cell.rank)] = pgm_level(cell.successes, cell.trials)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write("P2\n")
        f.write(f"{len(ranks)} {len(sparsities)}\n")
        f.write(f"{PGM_MAXVAL}\n")
        for row in levels:
            f.write(" ".join(str(v) for v in row) + "\n")
    logging.info(f"Wrote {len(ranks)}x{len(sparsities)} PGM to {path}")


def write_sweep_outputs(res: SweepResult, out_dir) -> Dict[str, Path]:
    """Emit phase.csv, phase.pgm, trials.csv and config.json into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out / "phase.csv",
        "pgm": out / "phase.pgm",
        "trials": out / "trials.csv",
        "config": out / "config.json",
    }
    emit_csv(res, paths["csv"])
    emit_pgm(res, paths["pgm"])
    emit_trials_csv(res, paths["trials"])
    with open(paths["config"], "w") as f:
        json.dump(asdict(res.config_echo), f, indent=2, sort_keys=True)
        f.write("\n")
    return paths


def write_rows_csv(rows: Sequence[Dict[str, object]], path) -> None:
    """Write dict rows; the header is the union of keys in first-seen order."""
    columns: List[str] = []
    for row in rows:
        columns.extend(k for k in row if k not in columns)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, restval="", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    logging.info(f"Wrote {len(rows)} rows to {path}")


# ---------------------------------------------------------------------------
# Certificate audit
# ---------------------------------------------------------------------------


def _audit_trial(
    m: int,
    n: int,
    r: int,
    rho: float,
    p: int,
    lam: float,
    trial: int,
    seed: int,
    j0: Optional[int] = None,
) -> Dict[str, object]:
    trial_seed = child_seed(seed, trial)
    low = gen_low_rank(m, n, r, child_seed(trial_seed, 0))
    sparse = gen_sparse(m, n, rho, seed=child_seed(trial_seed, 1))
    row: Dict[str, object] = {
        "trial": trial,
        "seed": trial_seed,
        "realized_sparsity": sparse.realized_fraction,
        "error": "",
    }
    try:
        terms = pcp_terms(low, sparse, lam)
        cert = build_pcp_certificate(
            low, sparse, lam, j0=j0, seed=child_seed(trial_seed, 2)
        )
        report = score_certificate(cert.lambda_pcp, terms)
        frob = float(np.linalg.norm(cert.lambda_pcp))
        row.update(report.to_row("pcp_"))
        row["pcp_j0"] = cert.j0
        row["pcp_frob"] = frob
        row["pcp_support_angle"] = cert.support_angle
        row["pcp_angle_ok"] = bool(cert.support_angle <= 0.5)
        row["pcp_inexact_ok"] = report.within(*strict_tolerances(m, n))
        row["pcp_classic_ok"] = report.within(*classic_tolerances(m, n))
        row["pcp_frob_ok"] = frob <= 4 * np.sqrt(r) + 4.0 / 3.0 * lam * np.sqrt(
            sparse.cardinality
        )

        ens: Optional[MeasurementEnsemble] = None
        candidate, candidate_report = cert.lambda_pcp, report
        if p > 0:
            q = m * n - p
            ens = MeasurementEnsemble.gaussian(m, n, q, child_seed(trial_seed, 3))
            golf = golfing_upgrade(cert.lambda_pcp, terms, ens)
            upgraded = score_certificate(golf.lambda_star, terms, ens)
            allowance = beta_degradation_allowance(
                cert.lambda_pcp, terms, q, seed=child_seed(trial_seed, 4)
            )
            row.update(upgraded.to_row("golf_"))
            row["golf_beta_ok"] = upgraded.beta <= 0.5
            row["golf_beta_allowance"] = allowance
            row["golf_beta_bound_ok"] = upgraded.beta <= report.beta + allowance
            row["golf_contraction_ok"] = golf.contraction_ok
            candidate, candidate_report = golf.lambda_star, upgraded

        exact = exact_upgrade(candidate, terms, ens)
        row.update(score_certificate(exact, terms, ens).to_row("exact_"))
        angle = 0.0
        if ens is not None:
            total = DirectSum([t.subspace for t in terms])
            angle = span_complement_angle(ens, total)
        relaxed_ok, limit = relaxed_certificate_check(candidate_report, angle, m, n)
        row["relaxed_angle"] = angle
        row["relaxed_alpha_limit"] = limit
        row["relaxed_ok"] = relaxed_ok
        verdict = verify_optimality(low.L, sparse.S, exact, ens, lam=lam)
        row.update(verdict.to_row("verdict_"))

        lsq = exact_upgrade(np.zeros((m, n)), terms, ens)
        row["lsq_passed"] = verify_optimality(low.L, sparse.S, lsq, ens, lam=lam).passed
    except CPCPError as e:
        row["error"] = f"{type(e).__name__}: {e}"
        logging.warning(f"Audit trial {trial} stopped early: {row['error']}")
    return row


def run_certificate_audit(
    m: int,
    n: int,
    r: int,
    rho: float,
    p: int,
    trials: int,
    seed: int,
    lam: Optional[float] = None,
    j0_rule: str = "default",
) -> List[Dict[str, object]]:
    """
    Run the certificate pipeline on seeded instances.

    Per trial the PCP certificate is built and scored against the strict
    (1/m^2, 1/4) and classic (1/(4 sqrt(m)), 1/2) targets. For p > 0 it is
    golfed into span(Q) with q = mn - p and its beta growth is compared with
    the allowance. The relaxed condition is applied to the resulting
    candidate, which exact_upgrade then repairs before the optimality check.
    The least-squares certificate exact_upgrade(0) is checked alongside.

    j0_rule "default" uses default_steps, "classic" the shorter
    classic_steps(m, n, r) schedule.

    Returns:
        One dict row per trial; trial errors are recorded in the "error" column
    """
    if not 0 <= p < m * n:
        raise InvalidParameterError(f"p must satisfy 0 <= p < m*n, got {p}")
    if trials < 1:
        raise InvalidParameterError(f"trials must be at least 1, got {trials}")
    if j0_rule not in J0_RULES:
        raise InvalidParameterError(
            f"j0_rule must be one of {', '.join(J0_RULES)}, got {j0_rule}"
        )
    lam = lam if lam is not None else 1.0 / np.sqrt(max(m, n))
    j0 = classic_steps(m, n, r) if j0_rule == "classic" else None

    rows = []
    for trial in range(trials):
        row = _audit_trial(m, n, r, rho, p, lam, trial, seed, j0)
        logging.info(
            f"Audit trial {trial}: pcp alpha={row.get('pcp_alpha', float('nan')):.2e} "
            f"beta={row.get('pcp_beta', float('nan')):.3f} "
            f"verdict={row.get('verdict_passed', '')} lsq={row.get('lsq_passed', '')}"
        )
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Lemma checks
# ---------------------------------------------------------------------------


def _summary_row(
    check: str, dim: int, gamma: int, threshold: float, stats: List[float], m, n
) -> Dict[str, object]:
    stats_arr = np.asarray(stats)
    passes = int(np.sum(stats_arr <= threshold))
    row = {
        "check": check,
        "m": m,
        "n": n,
        "dim_s": dim,
        "gamma": gamma,
        "trials": len(stats),
        "passes": passes,
        "threshold": float(threshold),
        "median_stat": float(np.median(stats_arr)),
        "max_stat": float(np.max(stats_arr)),
    }
    logging.info(
        f"{check}: {passes}/{len(stats)} within {threshold:.4f} "
        f"(median {row['median_stat']:.4f}, max {row['max_stat']:.4f})"
    )
    return row


def run_lemma_checks(
    seed: SeedLike,
    trials: int = LEMMA_TRIALS,
    m: int = LEMMA_M,
    n: int = LEMMA_N,
    dim: int = LEMMA_DIM,
    gamma_factor: int = LEMMA_GAMMA_FACTOR,
    range_factor: int = LEMMA_RANGE_FACTOR,
    nu_trials: int = LEMMA_NU_TRIALS,
) -> List[Dict[str, object]]:
    """
    Monte-Carlo checks of the golfing-block concentration bounds.

    For a random dim-dimensional subspace S of m x n matrices and a block of
    gamma = gamma_factor * dim Gaussian matrices:
        block_restricted: ||P_S (mn/gamma) A P_S - P_S|| <= 1/2
        block_range: ||P_S P_R P_S - (g/mn) P_S|| <= (g/mn)/16 with R the
            range of a separate block of g = range_factor * dim < mn matrices;
            its row also carries median_relative, the median deviation
            divided by g/mn
        block_leakage: ||P_S_perp (mn/gamma) A P_S M||_inf
            <= 10 ||P_S M||_F (nu + sqrt(log m)) / sqrt(gamma),
            nu the Monte-Carlo mean of ||G||_inf

    Returns:
        One summary row per check with pass counts and statistic quantiles
    """
    if trials < 1 or dim < 1 or gamma_factor < 1 or range_factor < 1:
        raise InvalidParameterError(
            "trials, dim, gamma_factor and range_factor must be positive"
        )
    mn = m * n
    gamma = gamma_factor * dim
    gamma_range = range_factor * dim
    if gamma_range >= mn:
        raise InvalidParameterError(
            f"range block of {gamma_range} matrices spans all of the {mn}-dim space"
        )
    nu, _ = expected_dual_norm(DualNorm.MAX_ABS, m, n, nu_trials, child_seed(seed, 9))
    fixed = make_rng(child_seed(seed, 8)).standard_normal((m, n))
    leak_scale = 10.0 * (nu + np.sqrt(np.log(max(m, n)))) / np.sqrt(gamma)

    restricted, ranged, leakage, leak_ratio = [], [], [], []
    for t in range(trials):
        subspace = ExplicitBasis.random(m, n, dim, child_seed(seed, 0, t))
        basis = subspace.basis()
        ens = MeasurementEnsemble.gaussian(m, n, gamma, child_seed(seed, 1, t))

        block = ens.block(range(gamma))
        compressed = block.compressed(basis) - np.eye(dim)
        restricted.append(float(np.max(np.abs(scipy.linalg.eigvalsh(compressed)))))

        range_ens = MeasurementEnsemble.gaussian(
            m, n, gamma_range, child_seed(seed, 2, t)
        )
        range_basis = range_ens.block(range(gamma_range)).range_descriptor().basis()
        cross = basis @ range_basis.T
        deviation = cross @ cross.T - (gamma_range / mn) * np.eye(dim)
        ranged.append(float(np.max(np.abs(scipy.linalg.eigvalsh(deviation)))))

        in_s = subspace.project(fixed)
        leaked = subspace.project_complement(block.apply_normalized(in_s))
        stat = float(np.max(np.abs(leaked)))
        bound = leak_scale * float(np.linalg.norm(in_s))
        leakage.append(stat)
        leak_ratio.append(stat / bound if bound > 0 else 0.0)

    rows = [
        _summary_row("block_restricted", dim, gamma, 0.5, restricted, m, n),
        _summary_row(
            "block_range", dim, gamma_range, gamma_range / mn / 16.0, ranged, m, n
        ),
        _summary_row("block_leakage", dim, gamma, 1.0, leak_ratio, m, n),
    ]
    rows[1]["median_relative"] = rows[1]["median_stat"] * mn / gamma_range
    rows[-1]["nu"] = nu
    rows[-1]["max_leak"] = float(np.max(leakage))
    return rows


# ---------------------------------------------------------------------------
# Settings
# ---------------------------------------------------------------------------


def load_solver_settings(
    settings_file: Optional[str], base: Optional[SolverConfig] = None
) -> SolverConfig:
    """
    Override solver defaults from a KEY=value settings file.

    Unparsable or out-of-range values log a warning and keep the default.

    Args:
        settings_file: Path to the settings file (None or missing -> defaults)
        base: Starting configuration (SolverConfig() when omitted)

    Returns:
        SolverConfig
    """
    values = asdict(base or SolverConfig())
    if not settings_file:
        return SolverConfig(**values)
    if not os.path.exists(settings_file):
        logging.warning(f"Settings file not found: {settings_file}")
        return SolverConfig(**values)

    config = dotenv_values(settings_file)
    for key, (name, parse, valid) in SETTINGS_KEYS.items():
        raw = config.get(key)
        if raw is None or raw == "":
            continue
        try:
            value = parse(raw)
        except ValueError:
            logging.warning(
                f"Invalid {key} value '{raw}'. Using default {values[name]}."
            )
            continue
        if not valid(value):
            logging.warning(
                f"{key} value {value} is outside the valid range. "
                f"Using default {values[name]}."
            )
            continue
        values[name] = value
        logging.info(f"{key} set to {value}")
    return SolverConfig(**values)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _int_list(text) -> List[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _float_list(text) -> List[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


SubParsers = Dict[str, argparse.ArgumentParser]


def build_parser() -> Tuple[argparse.ArgumentParser, SubParsers]:
    parser = argparse.ArgumentParser(
        description="Compressive PCP experiments: sweeps, audits and lemma checks"
    )
    parser.add_argument("--config", type=str, default=None, help="JSON defaults file")
    parser.add_argument(
        "--settings", type=str, default=None, help="Solver settings (KEY=value) file"
    )
    parser.add_argument(
        "--log-level",
        type=str,
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: INFO)",
    )
    parser.add_argument(
        "--log-file",
        type=str,
        default=DEFAULT_LOG_FILE,
        help=f"Log file path (default: {DEFAULT_LOG_FILE})",
    )
    subparsers = parser.add_subparsers(dest="command", help="Command to execute")

    sweep = subparsers.add_parser("sweep", help="Phase-transition sweep")
    sweep.add_argument("--m", type=int, default=30)
    sweep.add_argument("--n", type=int, default=30)
    sweep.add_argument("--p", type=int, default=0, help="Withheld measurements")
    sweep.add_argument("--ranks", type=_int_list, default=None, help="e.g. 1,2,3")
    sweep.add_argument(
        "--sparsities", type=_float_list, default=None, help="e.g. 0.02,0.05"
    )
    sweep.add_argument("--trials", type=int, default=10)
    sweep.add_argument("--success-tol", type=float, default=1e-3)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--out", type=str, default="output")
    sweep.add_argument(
        "--full-scale", action="store_true", help="Stream the ensemble from its seed"
    )
    sweep.add_argument("--mem-cap", type=int, default=DEFAULT_MEM_CAP, help="Bytes")
    sweep.add_argument("--workers", type=int, default=1)
    sweep.add_argument("--lambda", dest="lam", type=float, default=None)

    audit = subparsers.add_parser("audit", help="Certificate pipeline audit")
    audit.add_argument("--m", type=int, default=40)
    audit.add_argument("--n", type=int, default=40)
    audit.add_argument("--r", type=int, default=2)
    audit.add_argument("--rho", type=float, default=0.02)
    audit.add_argument("--p", type=int, default=0)
    audit.add_argument("--trials", type=int, default=10)
    audit.add_argument("--seed", type=int, default=0)
    audit.add_argument("--out", type=str, default="audit.csv")
    audit.add_argument("--lambda", dest="lam", type=float, default=None)
    audit.add_argument("--j0-rule", type=str, default="default", choices=J0_RULES)

    lemmas = subparsers.add_parser("lemmas", help="Golfing-block concentration checks")
    lemmas.add_argument("--seed", type=int, default=0)
    lemmas.add_argument("--trials", type=int, default=LEMMA_TRIALS)
    lemmas.add_argument("--gamma-factor", type=int, default=LEMMA_GAMMA_FACTOR)
    lemmas.add_argument("--range-factor", type=int, default=LEMMA_RANGE_FACTOR)
    lemmas.add_argument("--out", type=str, default="lemmas.csv")

    solve = subparsers.add_parser("solve", help="Decompose a matrix given as CSV")
    solve.add_argument("--input", type=str, required=True)
    solve.add_argument("--p", type=int, default=0)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--out", type=str, default="solve_output")
    solve.add_argument("--lambda", dest="lam", type=float, default=None)

    return parser, {"sweep": sweep, "audit": audit, "lemmas": lemmas, "solve": solve}


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse the command line; a --config JSON file supplies defaults."""
    parser, subparsers = build_parser()
    args, _ = parser.parse_known_args(argv)
    if args.config:
        with open(args.config) as f:
            overrides = {k.replace("-", "_"): v for k, v in json.load(f).items()}
        if "lambda" in overrides:
            overrides["lam"] = overrides.pop("lambda")
        parser.set_defaults(**overrides)
        if args.command in subparsers:
            subparsers[args.command].set_defaults(**overrides)
    return parser.parse_args(argv)


def _solver_config(args) -> SolverConfig:
    cfg = load_solver_settings(args.settings)
    if getattr(args, "lam", None) is not None:
        cfg = SolverConfig(**{**asdict(cfg), "lambda_": args.lam})
    return cfg


def cmd_sweep(args) -> int:
    cfg = SweepConfig(
        m=args.m,
        n=args.n,
        p=args.p,
        rank_grid=_int_list(args.ranks) if args.ranks else [],
        sparsity_grid=(
            _float_list(args.sparsities) if args.sparsities else default_sparsity_grid()
        ),
        trials=args.trials,
        success_tol=args.success_tol,
        solver=_solver_config(args),
        master_seed=args.seed,
        output_dir=args.out,
        full_scale=args.full_scale,
        mem_cap=args.mem_cap,
        workers=args.workers,
    )
    res = run_sweep(cfg)
    paths = write_sweep_outputs(res, cfg.output_dir)
    logging.info(f"Sweep outputs: {', '.join(str(p) for p in paths.values())}")
    return 0


def cmd_audit(args) -> int:
    rows = run_certificate_audit(
        args.m,
        args.n,
        args.r,
        args.rho,
        args.p,
        args.trials,
        args.seed,
        args.lam,
        j0_rule=args.j0_rule,
    )
    write_rows_csv(rows, args.out)
    passed = sum(bool(row.get("verdict_passed")) for row in rows)
    logging.info(f"Audit: {passed}/{len(rows)} certificates verified")
    return 0


def cmd_lemmas(args) -> int:
    rows = run_lemma_checks(
        args.seed,
        trials=args.trials,
        gamma_factor=args.gamma_factor,
        range_factor=args.range_factor,
    )
    write_rows_csv(rows, args.out)
    return 0


def cmd_solve(args) -> int:
    M = read_matrix_csv(args.input)
    m, n = M.shape
    cfg = _solver_config(args)
    if not 0 <= args.p < m * n:
        raise InvalidParameterError(f"p must satisfy 0 <= p < m*n = {m * n}")
    if args.p == 0:
        result = solve_pcp(M, cfg)
    else:
        ens = MeasurementEnsemble.gaussian(m, n, m * n - args.p, args.seed)
        result = solve_cpcp(ens, ens.apply(M), cfg)

    out = Path(args.out)
    write_matrix_csv(result.L, out / "L.csv")
    write_matrix_csv(result.S, out / "S.csv")
    with open(out / "result.json", "w") as f:
        f.write(result.to_json() + "\n")
    print(result.to_json())
    return 0


COMMANDS = {
    "sweep": cmd_sweep,
    "audit": cmd_audit,
    "lemmas": cmd_lemmas,
    "solve": cmd_solve,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point."""
    try:
        args = parse_args(argv)
    except OSError as e:
        print(f"Cannot read config file: {e}", file=sys.stderr)
        return 1
    except (ValueError, TypeError) as e:
        print(f"Invalid config file: {e}", file=sys.stderr)
        return 2

    if not args.command:
        build_parser()[0].print_help()
        return 2

    try:
        log_handler = logging.FileHandler(args.log_file)
    except OSError as e:
        print(f"Cannot open log file: {e}", file=sys.stderr)
        return 1

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s.%(msecs)03d %(levelname)-8s "
        "[CPCP %(threadName)s] %(message)s",
        datefmt="%m-%d %H:%M:%S",
        handlers=[log_handler, logging.StreamHandler(sys.stdout)],
    )

    logging.info("=" * 60)
    logging.info(f"CPCP {args.command} starting")
    logging.info(f"Arguments: {vars(args)}")
    logging.info("=" * 60)

    try:
        code = COMMANDS[args.command](args)
    except (CPCPError, ValueError) as e:
        logging.error(f"Refused: {e}")
        code = 2
    except OSError as e:
        logging.error(f"I/O error: {e}")
        code = 1

    logging.info("=" * 60)
    logging.info(f"CPCP {args.command} finished with exit code {code}")
    logging.info("=" * 60)
    return code


if __name__ == "__main__":
    sys.exit(main())
