"""
Tests for sweeps, output emission, certificate audits, lemma checks,
settings and the command line.
"""

import csv
import json
import os
import sys

import numpy as np
import pytest

# Add parent and common directories to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.append(
    os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "common")
)

from certificates import classic_steps, default_steps
from cpcp_errors import InvalidParameterError, MemoryCapExceededError
from experiments import (
    CSV_COLUMNS,
    TRIAL_COLUMNS,
    CellResult,
    SweepConfig,
    SweepResult,
    default_rank_grid,
    default_sparsity_grid,
    emit_csv,
    emit_pgm,
    load_solver_settings,
    main,
    parse_args,
    parse_csv,
    pgm_level,
    run_certificate_audit,
    run_lemma_checks,
    run_sweep,
    run_trial,
    write_rows_csv,
    write_sweep_outputs,
)
from instances import gen_low_rank, gen_sparse
from matrix_io import read_matrix_csv, write_matrix_csv
from solvers import SolverConfig


@pytest.fixture
def easy_config(tmp_path):
    """One-cell sweep well inside the success region."""
    return SweepConfig(
        m=20,
        n=20,
        p=0,
        rank_grid=[1],
        sparsity_grid=[0.0],
        trials=3,
        output_dir=str(tmp_path / "sweep"),
    )


def _cell(rank, sparsity, successes, trials=10):
    return CellResult(rank, sparsity, successes, trials, 1e-4, 2e-4, 57.0)


@pytest.fixture
def toy_result():
    """Hand-built 2x2 result for emitter tests."""
    cfg = SweepConfig(m=10, n=10, rank_grid=[1, 2], sparsity_grid=[0.1, 0.2])
    cells = [_cell(1, 0.1, 10), _cell(1, 0.2, 3), _cell(2, 0.1, 5), _cell(2, 0.2, 0)]
    return SweepResult(cells=cells, config_echo=cfg)


@pytest.mark.unit
class TestSweepConfig:
    """Test suite for SweepConfig validation and defaults."""

    def test_default_grids(self):
        assert default_rank_grid(30) == [1, 3, 5, 7, 9, 11, 13, 15]
        grid = default_sparsity_grid()
        assert len(grid) == 17
        assert grid[0] == 0.02 and grid[-1] == 0.5

    def test_q(self):
        assert SweepConfig(m=10, n=10, p=30, rank_grid=[1]).q == 70

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"p": 100},
            {"p": -1},
            {"rank_grid": [2, 1]},
            {"rank_grid": [11]},
            {"sparsity_grid": [0.2, 0.1]},
            {"sparsity_grid": [1.0]},
            {"trials": 0},
            {"workers": 0},
            {"success_tol": 0.0},
        ],
    )
    def test_invalid(self, kwargs):
        base = {"m": 10, "n": 10, "rank_grid": [1], "sparsity_grid": [0.1]}
        with pytest.raises(InvalidParameterError):
            SweepConfig(**{**base, **kwargs})

    def test_solver_from_dict(self):
        cfg = SweepConfig(m=10, n=10, rank_grid=[1], solver={"max_iters": 7})
        assert isinstance(cfg.solver, SolverConfig)
        assert cfg.solver.max_iters == 7

    def test_memory_estimate(self):
        assert SweepConfig(m=100, n=100, rank_grid=[1]).memory_estimate() == 0
        dense = SweepConfig(m=100, n=100, p=5000, rank_grid=[1])
        streamed = SweepConfig(m=100, n=100, p=5000, rank_grid=[1], full_scale=True)
        assert dense.memory_estimate() == 5000 * 10000 * 8 + 5000 * 5000 * 8
        assert streamed.memory_estimate() < dense.memory_estimate()


@pytest.mark.unit
class TestSweep:
    """Test suite for run_trial and run_sweep."""

    def test_easy_cell_succeeds(self, easy_config):
        res = run_sweep(easy_config)
        assert len(res.cells) == 1
        assert res.cell(1, 0.0).successes == 3
        assert len(res.trials) == 3
        np.testing.assert_array_equal(res.success_grid(), [[1.0]])

    def test_trial_is_reproducible(self, easy_config):
        a, _ = run_trial(easy_config, 0, 0, 1)
        b, _ = run_trial(easy_config, 0, 0, 1)
        assert a == b

    def test_outputs_are_deterministic(self, tmp_path):
        """Two runs of the same configuration write identical tables."""
        paths = []
        for name in ("a", "b"):
            cfg = SweepConfig(
                m=8,
                n=8,
                p=10,
                rank_grid=[1, 2],
                sparsity_grid=[0.02, 0.1],
                trials=2,
                master_seed=5,
                output_dir=str(tmp_path / name),
            )
            paths.append(write_sweep_outputs(run_sweep(cfg), cfg.output_dir))
        for key in ("csv", "pgm", "trials"):
            assert paths[0][key].read_bytes() == paths[1][key].read_bytes()

    def test_workers_do_not_change_results(self, tmp_path):
        kwargs = dict(
            m=8, n=8, rank_grid=[1, 2], sparsity_grid=[0.02, 0.1], trials=2
        )
        serial = run_sweep(SweepConfig(**kwargs, workers=1))
        threaded = run_sweep(SweepConfig(**kwargs, workers=3))
        assert serial.cells == threaded.cells

    def test_memory_cap(self):
        cfg = SweepConfig(
            m=10, n=10, p=10, rank_grid=[1], sparsity_grid=[0.02], mem_cap=1
        )
        with pytest.raises(MemoryCapExceededError):
            run_sweep(cfg)

    def test_sweep_outputs(self, easy_config):
        paths = write_sweep_outputs(run_sweep(easy_config), easy_config.output_dir)
        assert {p.name for p in paths.values()} == {
            "phase.csv",
            "phase.pgm",
            "trials.csv",
            "config.json",
        }
        with open(paths["trials"]) as f:
            rows = list(csv.reader(f))
        assert rows[0] == TRIAL_COLUMNS
        assert len(rows) == 1 + 3
        echo = json.loads(paths["config"].read_text())
        assert echo["rank_grid"] == [1]
        assert echo["solver"]["max_iters"] == SolverConfig().max_iters


@pytest.mark.unit
class TestEmitters:
    def test_pgm_rounding(self):
        assert pgm_level(3, 10) == 77
        assert pgm_level(1, 2) == 128
        assert pgm_level(10, 10) == 255
        assert pgm_level(0, 10) == 0

    def test_pgm_layout(self, toy_result, tmp_path):
        """Largest sparsity is the top row; ranks run left to right."""
        path = tmp_path / "phase.pgm"
        emit_pgm(toy_result, path)
        lines = path.read_text().splitlines()
        assert lines[:3] == ["P2", "2 2", "255"]
        assert lines[3] == "77 0"
        assert lines[4] == "255 128"

    def test_csv_round_trip(self, toy_result, tmp_path):
        path = tmp_path / "phase.csv"
        emit_csv(toy_result, path)
        assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
        assert parse_csv(path) == toy_result.cells

    def test_parse_rejects_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("rank,sparsity\n1,0.1\n")
        with pytest.raises(ValueError):
            parse_csv(path)

    def test_rows_csv_union_header(self, tmp_path):
        path = tmp_path / "rows.csv"
        write_rows_csv([{"a": 1, "b": True}, {"a": 2, "c": 0.5}], path)
        with open(path) as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == ["a", "b", "c"]
        assert rows[0]["b"] == "true" and rows[0]["c"] == ""
        assert rows[1]["c"] == "0.5"


@pytest.mark.unit
class TestCertificateAudit:
    """Test suite for run_certificate_audit."""

    def test_uncorrupted_full_observation(self):
        rows = run_certificate_audit(12, 12, 1, 0.0, 0, trials=2, seed=1)
        assert len(rows) == 2
        for row in rows:
            assert row["error"] == ""
            assert row["realized_sparsity"] == 0.0
            assert row["exact_alpha"] <= 1e-8
            assert row["verdict_anchor_L"] and row["verdict_span_Q"]
            assert row["verdict_independent"]
            assert row["verdict_passed"] == (row["pcp_beta_1"] < 1.0)
            assert "golf_alpha" not in row
            assert isinstance(row["lsq_passed"], bool)

    def test_compressive_audit(self):
        rows = run_certificate_audit(12, 12, 1, 0.05, 43, trials=1, seed=2)
        row = rows[0]
        assert row["error"] == ""
        assert row["golf_q_residual"] <= 1e-6
        assert row["exact_alpha"] <= 1e-6
        assert row["exact_q_residual"] <= 1e-6
        assert isinstance(row["golf_contraction_ok"], bool)

    def test_certificate_tolerance_columns(self):
        rows = run_certificate_audit(12, 12, 1, 0.0, 0, trials=1, seed=1)
        row = rows[0]
        assert row["pcp_j0"] == default_steps(12, 12)
        assert row["pcp_angle_ok"] is True
        assert isinstance(row["pcp_inexact_ok"], bool)
        assert isinstance(row["pcp_classic_ok"], bool)
        assert row["relaxed_angle"] == 0.0
        assert row["relaxed_alpha_limit"] == pytest.approx(1.0 / (4.0 * np.sqrt(12)))
        assert isinstance(row["relaxed_ok"], bool)

    def test_compressive_relaxed_columns(self):
        row = run_certificate_audit(12, 12, 1, 0.05, 43, trials=1, seed=2)[0]
        assert row["golf_beta_allowance"] > 0.0
        assert isinstance(row["golf_beta_bound_ok"], bool)
        assert 0.0 < row["relaxed_angle"] <= 1.0
        assert row["relaxed_alpha_limit"] < 1.0 / (4.0 * np.sqrt(12))

    def test_classic_schedule(self):
        rows = run_certificate_audit(
            12, 12, 1, 0.05, 0, trials=1, seed=3, j0_rule="classic"
        )
        assert rows[0]["pcp_j0"] == classic_steps(12, 12, 1) == 4

    def test_rejects_unknown_schedule(self):
        with pytest.raises(InvalidParameterError):
            run_certificate_audit(8, 8, 1, 0.05, 0, trials=1, seed=0, j0_rule="fast")

    def test_rejects_bad_p(self):
        with pytest.raises(InvalidParameterError):
            run_certificate_audit(5, 5, 1, 0.1, 25, trials=1, seed=0)


@pytest.mark.unit
class TestLemmaChecks:
    def test_summary_rows(self):
        rows = run_lemma_checks(seed=3, trials=4, nu_trials=200)
        assert [row["check"] for row in rows] == [
            "block_restricted",
            "block_range",
            "block_leakage",
        ]
        for row in rows:
            assert 0 <= row["passes"] <= row["trials"] == 4
            assert row["median_stat"] <= row["max_stat"]
        assert rows[1]["gamma"] == 8 * 20 < 15 * 15
        assert rows[1]["median_stat"] > 0.0
        assert rows[2]["nu"] > 0

    def test_range_deviation_shrinks_with_block_size(self):
        """A larger block concentrates P_S P_R P_S closer to (g/mn) P_S."""
        small = run_lemma_checks(seed=3, trials=4, range_factor=2, nu_trials=200)
        large = run_lemma_checks(seed=3, trials=4, range_factor=8, nu_trials=200)
        assert large[1]["median_relative"] < small[1]["median_relative"]

    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            run_lemma_checks(seed=0, trials=0)
        with pytest.raises(InvalidParameterError):
            run_lemma_checks(seed=0, trials=1, range_factor=12)


@pytest.mark.unit
class TestSolverSettings:
    """Test suite for load_solver_settings."""

    def test_missing_file_gives_defaults(self, tmp_path):
        assert load_solver_settings(str(tmp_path / "none.env")) == SolverConfig()
        assert load_solver_settings(None) == SolverConfig()

    def test_valid_override(self, tmp_path):
        path = tmp_path / "cpcp.env"
        path.write_text("CPCP_MAX_ITERS=123\nCPCP_LAMBDA=0.2\n")
        cfg = load_solver_settings(str(path))
        assert cfg.max_iters == 123
        assert cfg.lambda_ == 0.2

    def test_invalid_values_fall_back(self, tmp_path):
        path = tmp_path / "cpcp.env"
        path.write_text("CPCP_CONTINUATION_FACTOR=1.5\nCPCP_REL_TOL=abc\n")
        cfg = load_solver_settings(str(path))
        assert cfg.continuation_factor == SolverConfig().continuation_factor
        assert cfg.rel_tol == SolverConfig().rel_tol


@pytest.mark.unit
class TestCommandLine:
    """Test suite for argument parsing and main()."""

    @pytest.fixture
    def log_args(self, tmp_path):
        return ["--log-file", str(tmp_path / "cpcp.log")]

    @pytest.fixture
    def matrix_file(self, tmp_path):
        low = gen_low_rank(6, 6, 1, seed=1)
        sparse = gen_sparse(6, 6, 0.05, seed=2)
        path = tmp_path / "M.csv"
        write_matrix_csv(low.L + sparse.S, path)
        return path

    def test_config_file_supplies_defaults(self, tmp_path):
        path = tmp_path / "defaults.json"
        path.write_text(json.dumps({"trials": 3, "lambda": 0.2}))
        args = parse_args(["--config", str(path), "sweep"])
        assert args.trials == 3
        assert args.lam == 0.2

    def test_command_line_beats_config(self, tmp_path):
        path = tmp_path / "defaults.json"
        path.write_text(json.dumps({"trials": 3}))
        args = parse_args(["--config", str(path), "sweep", "--trials", "5"])
        assert args.trials == 5

    def test_lists_parse(self):
        args = parse_args(["sweep", "--ranks", "1,2", "--sparsities", "0.02,0.05"])
        assert args.ranks == [1, 2]
        assert args.sparsities == [0.02, 0.05]

    def test_no_command(self, capsys):
        assert main([]) == 2

    def test_bad_config_json(self, tmp_path):
        path = tmp_path / "defaults.json"
        path.write_text("{not json")
        assert main(["--config", str(path), "sweep"]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["--config", str(tmp_path / "none.json"), "sweep"]) == 1

    def test_refuses_bad_p(self, log_args, tmp_path):
        """p >= mn is a precondition refusal."""
        argv = log_args + ["sweep", "--m", "4", "--n", "4", "--p", "16",
                           "--out", str(tmp_path / "out")]
        assert main(argv) == 2

    def test_unwritable_log_file_is_io_error(self, tmp_path, capsys):
        log_file = tmp_path / "no_such_dir" / "cpcp.log"
        argv = ["--log-file", str(log_file), "lemmas", "--trials", "1"]
        assert main(argv) == 1
        assert "Cannot open log file" in capsys.readouterr().err

    def test_missing_input_is_io_error(self, log_args, tmp_path):
        argv = log_args + ["solve", "--input", str(tmp_path / "absent.csv")]
        assert main(argv) == 1

    def test_solve_end_to_end(self, log_args, matrix_file, tmp_path, capsys):
        out = tmp_path / "solved"
        assert main(log_args + ["solve", "--input", str(matrix_file),
                                "--out", str(out)]) == 0
        L = read_matrix_csv(out / "L.csv")
        S = read_matrix_csv(out / "S.csv")
        assert L.shape == S.shape == (6, 6)
        summary = json.loads((out / "result.json").read_text())
        assert summary["status"] in {"converged", "max-iters", "diverged"}
        assert '"status"' in capsys.readouterr().out

    def test_compressive_solve(self, log_args, matrix_file, tmp_path):
        out = tmp_path / "compressive"
        argv = log_args + ["solve", "--input", str(matrix_file), "--p", "5",
                           "--seed", "3", "--out", str(out)]
        assert main(argv) == 0
        assert (out / "L.csv").exists()

    def test_audit_command(self, log_args, tmp_path):
        out = tmp_path / "audit.csv"
        argv = log_args + ["audit", "--m", "8", "--n", "8", "--r", "1",
                           "--rho", "0.05", "--trials", "1", "--out", str(out)]
        assert main(argv) == 0
        with open(out) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 1
        assert "verdict_passed" in rows[0]

    def test_audit_classic_schedule(self, log_args, tmp_path):
        out = tmp_path / "audit.csv"
        argv = log_args + ["audit", "--m", "8", "--n", "8", "--r", "1",
                           "--rho", "0.0", "--trials", "1", "--j0-rule", "classic",
                           "--out", str(out)]
        assert main(argv) == 0
        with open(out) as f:
            rows = list(csv.DictReader(f))
        assert rows[0]["pcp_j0"] == "4"
        assert rows[0]["relaxed_ok"] in {"true", "false"}


@pytest.mark.slow
@pytest.mark.timeout(1800)
class TestMonteCarlo:
    """Longer Monte-Carlo runs."""

    def test_lemma_checks_hold(self):
        rows = run_lemma_checks(seed=7)
        restricted, ranged, leakage = rows
        assert restricted["passes"] >= 95
        assert 0 <= ranged["passes"] <= ranged["trials"] == 100
        assert 0.0 < ranged["median_relative"] < 1.0
        assert leakage["passes"] >= 95

    def test_success_falls_with_withheld_measurements(self):
        """Withholding more measurements never helps, up to one trial of noise."""
        successes = []
        for p in (0, 40, 80):
            cfg = SweepConfig(
                m=12, n=12, p=p, rank_grid=[2], sparsity_grid=[0.1], trials=5
            )
            successes.append(run_sweep(cfg).cells[0].successes)
        assert successes[0] + 1 >= successes[1]
        assert successes[1] + 1 >= successes[2]
