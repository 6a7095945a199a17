import json

import pandas as pd
import pytest

from darksqueeze.cli import EXIT_CONFIG, EXIT_INVALID, EXIT_OK, SUMMARY_COLUMNS, main
from darksqueeze.core.config import settings
from darksqueeze.services.dynamics import SERIES_COLUMNS


@pytest.fixture
def serial_sweeps(monkeypatch):
    monkeypatch.setattr(settings, "threads", 1)


class TestDerive:
    def test_reference_values(self, reference_config, capsys):
        assert main(["derive", str(reference_config)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "lambda1" in out and "0.2500" in out
        assert "1.0986" in out
        assert "150.0000" in out and "250.0000" in out
        assert "large_detuning_ok = yes" in out

    def test_zero_detuning(self, reference_config, capsys):
        code = main(["derive", str(reference_config), "--set", "delta1_kHz=0"])
        assert code == EXIT_CONFIG
        assert "delta1 must be nonzero" in capsys.readouterr().err

    def test_above_threshold_is_reported(self, reference_config, capsys):
        assert main(["derive", str(reference_config), "--set", "omega2_max_kHz=6000"]) == EXIT_OK
        assert "n/a (above threshold)" in capsys.readouterr().out

    def test_unknown_key(self, reference_config, capsys):
        assert main(["derive", str(reference_config), "--set", "omega3_kHz=1"]) == EXIT_CONFIG
        assert "omega3_kHz" in capsys.readouterr().err


class TestBudget:
    def test_writes_csv(self, reference_config, tmp_path, capsys):
        output = tmp_path / "budget.csv"
        assert main(["budget", str(reference_config), "--set", f"output={output}"]) == EXIT_OK
        frame = pd.read_csv(output)
        assert frame["p_b"].iloc[0] == pytest.approx(4.639e-3, rel=0.02)
        assert "cooperativity" in capsys.readouterr().out

    def test_zero_delta_a(self, reference_config, capsys):
        assert main(["budget", str(reference_config), "--set", "delta_a_kHz=0"]) == EXIT_CONFIG
        assert "delta_a must be positive for budget" in capsys.readouterr().err


class TestEvolve:
    def test_time_series(self, quick_config, tmp_path, capsys):
        output = tmp_path / "series.csv"
        assert main(["evolve", str(quick_config), "--set", f"output={output}"]) == EXIT_OK
        frame = pd.read_csv(output)
        assert list(frame.columns) == SERIES_COLUMNS
        assert len(frame) == 201
        assert "valid=yes" in capsys.readouterr().out

    def test_undersized_collective_mode(self, quick_config, tmp_path, capsys):
        output = tmp_path / "x.csv"
        code = main([
            "evolve", str(quick_config), "--set", "b_dim=5", "--set", "omega2_max_kHz=4000",
            "--set", f"output={output}",
        ])
        assert code == EXIT_INVALID
        out = capsys.readouterr().out
        assert "valid=no" in out
        assert "(truncation" in out
        # the series up to the end of the ramp is still written
        assert len(pd.read_csv(output)) == 201

    def test_truncation_breach_exit_code(self, quick_config, tmp_path, capsys):
        code = main([
            "evolve", str(quick_config), "--set", "truncation_tol=1e-6", "--set", f"output={tmp_path / 'x.csv'}",
        ])
        assert code == EXIT_INVALID
        assert "valid=no" in capsys.readouterr().out


class TestSweep:
    def test_rows_in_grid_order(self, quick_config, tmp_path, serial_sweeps):
        output = tmp_path / "sweep.csv"
        code = main([
            "sweep", str(quick_config), "--parameter", "t_total_us", "--values", "40,20",
            "--output", str(output),
        ])
        assert code == EXIT_OK
        frame = pd.read_csv(output)
        assert list(frame.columns) == ["t_total_us"] + SUMMARY_COLUMNS + ["error"]
        assert list(frame["t_total_us"]) == [40.0, 20.0]

    def test_failed_point_is_flagged(self, quick_config, tmp_path, serial_sweeps):
        output = tmp_path / "sweep.csv"
        code = main([
            "sweep", str(quick_config), "--parameter", "omega2_max_kHz", "--values", "6000,2000",
            "--output", str(output),
        ])
        assert code == EXIT_OK
        frame = pd.read_csv(output)
        assert "lambda2" in frame["error"].iloc[0]
        assert pd.isna(frame["error"].iloc[1])

    def test_undersized_point_is_invalid_not_failed(self, quick_config, tmp_path, serial_sweeps):
        output = tmp_path / "sweep.csv"
        code = main([
            "sweep", str(quick_config), "--parameter", "b_dim", "--values", "3,8", "--output", str(output),
        ])
        assert code == EXIT_OK
        frame = pd.read_csv(output)
        assert pd.isna(frame["error"]).all()
        assert list(frame["valid"]) == [False, True]
        assert frame["breach_reason"].iloc[0].startswith("truncation")

    def test_all_points_failing_is_invalid(self, quick_config, tmp_path, serial_sweeps, capsys):
        output = tmp_path / "sweep.csv"
        code = main([
            "sweep", str(quick_config), "--parameter", "omega2_max_kHz", "--values", "6000,7000",
            "--output", str(output),
        ])
        assert code == EXIT_INVALID
        assert "0/2 points completed" in capsys.readouterr().out
        assert len(pd.read_csv(output)) == 2

    def test_empty_grid(self, quick_config, capsys):
        code = main(["sweep", str(quick_config), "--parameter", "t_total_us", "--values", ""])
        assert code == EXIT_CONFIG
        assert "sweep grid is empty" in capsys.readouterr().err


class TestOracle:
    def test_transformed_suite_with_negative_control(self, reference_config, tmp_path, capsys):
        output = tmp_path / "oracle.jsonl"
        code = main([
            "oracle", str(reference_config), "--negative-control",
            "--set", "level=transformed", "--set", "cavity_dim=30", "--set", "b_dim=30",
            "--set", f"output={output}",
        ])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "FAIL (expected)" in out
        records = [json.loads(line) for line in output.read_text().splitlines()]
        assert [r["check"] for r in records][-1] == "gap_numeric_vs_analytic"
        assert len(records) == 4
