"""Command-line interface: all seven subcommands, exit codes, error JSON."""

from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import chain_instance, rotation_instance
from fairwork import dump_instance, save_instance
from fairwork.cli import main, run


@pytest.fixture
def chain_file(tmp_path):
    path = tmp_path / "chain.json"
    save_instance(chain_instance("explicit"), str(path))
    return str(path)


@pytest.fixture
def rotation_file(tmp_path):
    path = tmp_path / "rotation.json"
    save_instance(rotation_instance(), str(path))
    return str(path)


def run_cli(capsys, *argv) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def stderr_error(err_text: str) -> dict:
    return json.loads(err_text)


class TestSolve:
    def test_solve_writes_a_report_to_stdout(self, capsys, chain_file):
        code, out, err = run_cli(
            capsys, "solve", "--in", chain_file, "--program", "eg-demand",
            "--budgets", "unit",
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["program"] == "eg-demand"
        assert payload["converged"] is True
        assert payload["budget_mode"] == "unit"
        assert payload["allocation"][0][0][0] == pytest.approx(0.95, abs=1e-6)

    def test_out_flag_writes_the_file_instead(self, capsys, chain_file, tmp_path):
        out_path = tmp_path / "report.json"
        code, out, _ = run_cli(
            capsys, "solve", "--in", chain_file, "--program", "eg-demand",
            "--budgets", "unit", "--out", str(out_path),
        )
        assert code == 0
        assert out == ""
        assert json.loads(out_path.read_text())["program"] == "eg-demand"

    def test_verbose_prints_trace_to_stderr(self, capsys, chain_file):
        _, _, err = run_cli(
            capsys, "solve", "--in", chain_file, "--program", "eg-demand",
            "--budgets", "unit", "--verbose",
        )
        assert "maximize" in err

    def test_eg_on_demand_instance_is_a_domain_error(self, capsys, chain_file):
        code, out, err = run_cli(
            capsys, "solve", "--in", chain_file, "--program", "eg", "--budgets", "unit"
        )
        assert code == 1
        assert out == ""
        payload = stderr_error(err)
        assert payload["error"] == "validation-failed"
        assert any(v["code"] == "nonzero-demand" for v in payload["violations"])

    def test_bad_gamma_names_the_flag(self, capsys, rotation_file):
        code, _, err = run_cli(
            capsys, "solve", "--in", rotation_file, "--program", "eg-smooth",
            "--gamma", "-0.5", "--penalty", "absdev",
        )
        assert code == 1
        payload = stderr_error(err)
        assert payload["error"] == "bad-gamma"
        assert payload["field"] == "--gamma"

    def test_missing_file_is_an_io_error(self, capsys):
        code, _, err = run_cli(
            capsys, "solve", "--in", "/nonexistent.json", "--program", "eg"
        )
        assert code == 1
        assert stderr_error(err)["error"] == "io-error"

    def test_unknown_program_is_a_usage_error(self, capsys, chain_file):
        with pytest.raises(SystemExit) as exc:
            main(["solve", "--in", chain_file, "--program", "eg-magic"])
        assert exc.value.code == 2

    def test_missing_required_flag_is_a_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["solve", "--program", "eg"])
        assert exc.value.code == 2


class TestLeximin:
    def test_leximin_report(self, capsys, chain_file):
        code, out, _ = run_cli(
            capsys, "leximin", "--in", chain_file, "--program", "eg-demand",
            "--budgets", "demand",
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["program"] == "eg-demand"
        assert payload["prices"] is None
        assert payload["stages"]
        assert payload["allocation"][0][0][0] == pytest.approx(0.903575995623106, abs=1e-6)

    def test_smooth_program_is_a_usage_error(self, capsys, rotation_file):
        with pytest.raises(SystemExit) as exc:
            main(["leximin", "--in", rotation_file, "--program", "eg-smooth"])
        assert exc.value.code == 2


class TestVerifyAndCompare:
    def test_verify_passes_a_fresh_report(self, capsys, chain_file, tmp_path):
        report = tmp_path / "report.json"
        run_cli(
            capsys, "solve", "--in", chain_file, "--program", "eg-demand",
            "--budgets", "unit", "--out", str(report),
        )
        code, out, _ = run_cli(
            capsys, "verify", "--in", chain_file, "--budgets", "unit",
            "--report", str(report),
        )
        assert code == 0
        records = json.loads(out)
        assert all(r["passed"] for r in records if r["applicable"])

    def test_verify_fails_a_corrupted_report(self, capsys, chain_file, tmp_path):
        report = tmp_path / "report.json"
        run_cli(
            capsys, "solve", "--in", chain_file, "--program", "eg-demand",
            "--budgets", "unit", "--out", str(report),
        )
        payload = json.loads(report.read_text())
        payload["allocation"][0][0][0] = 0.2  # starve the first buyer
        report.write_text(json.dumps(payload))
        code, out, _ = run_cli(
            capsys, "verify", "--in", chain_file, "--budgets", "unit",
            "--report", str(report),
        )
        assert code == 1
        records = json.loads(out)
        failed = [r["check"] for r in records if r["applicable"] and not r["passed"]]
        assert failed

    def test_compare_two_programs(self, capsys, chain_file, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run_cli(
            capsys, "solve", "--in", chain_file, "--program", "eg-demand",
            "--budgets", "demand", "--out", str(a),
        )
        run_cli(
            capsys, "leximin", "--in", chain_file, "--program", "eg-demand",
            "--budgets", "demand", "--out", str(b),
        )
        code, out, _ = run_cli(
            capsys, "compare", "--in", chain_file, "--budgets", "demand",
            "--a", str(a), "--b", str(b),
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["equivalent"] is False
        assert payload["max_profile_gap"] > 0.05


class TestSweep:
    def test_csv_sweep(self, capsys, rotation_file):
        code, out, _ = run_cli(
            capsys, "sweep", "--in", rotation_file, "--penalty", "absdev",
            "--gamma", "0.0", "--gamma", "0.005",
        )
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "gamma,objective,total_variation,penalty_value"
        assert len(lines) == 3

    def test_json_sweep_reports_failures_per_point(self, capsys, rotation_file):
        code, out, err = run_cli(
            capsys, "sweep", "--in", rotation_file, "--penalty", "kl",
            "--gamma", "0.001", "--gamma", "-2.0", "--format", "json",
        )
        assert code == 0
        rows = json.loads(out)
        assert rows[0]["failed"] is False
        assert rows[1]["failed"] is True and rows[1]["objective"] is None
        assert "failed" in err

    def test_gamma_flag_is_required(self, capsys, rotation_file):
        with pytest.raises(SystemExit) as exc:
            main(["sweep", "--in", rotation_file, "--penalty", "absdev"])
        assert exc.value.code == 2


class TestGen:
    def test_gen_is_deterministic_and_parseable(self, capsys):
        args = ["gen", "--buyers", "5", "--items", "4", "--periods", "2", "--seed", "9"]
        code_a, out_a, _ = run_cli(capsys, *args)
        code_b, out_b, _ = run_cli(capsys, *args)
        assert code_a == code_b == 0
        assert out_a == out_b
        payload = json.loads(out_a)
        assert len(payload["buyers"]) == 5 and len(payload["items"]) == 4

    def test_gen_binary_values(self, capsys):
        _, out, _ = run_cli(
            capsys, "gen", "--buyers", "3", "--items", "3", "--values", "binary"
        )
        payload = json.loads(out)
        assert all(v["value"] == 1.0 for v in payload["valuations"])

    def test_gen_domain_error_names_the_field(self, capsys):
        code, _, err = run_cli(
            capsys, "gen", "--buyers", "3", "--items", "3",
            "--zero-demand", "--budgets", "demand",
        )
        assert code == 1
        payload = stderr_error(err)
        assert payload["error"] == "unsatisfiable-config"
        assert payload["field"] == "budget_mode"


class TestEvaluate:
    def test_csv_evaluation(self, capsys, chain_file, tmp_path):
        report = tmp_path / "report.json"
        run_cli(
            capsys, "solve", "--in", chain_file, "--program", "eg-demand",
            "--budgets", "unit", "--out", str(report),
        )
        code, out, _ = run_cli(
            capsys, "evaluate", "--in", chain_file, "--budgets", "unit",
            "--report", str(report), "--realizations", "10",
        )
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "realization,buyer,shortfall,coverage"
        assert len(lines) == 1 + 10 * 2

    def test_json_evaluation_carries_coverage_probability(self, capsys, chain_file, tmp_path):
        report = tmp_path / "report.json"
        run_cli(
            capsys, "solve", "--in", chain_file, "--program", "eg-demand",
            "--budgets", "unit", "--out", str(report),
        )
        code, out, _ = run_cli(
            capsys, "evaluate", "--in", chain_file, "--budgets", "unit",
            "--report", str(report), "--realizations", "32", "--format", "json",
        )
        assert code == 0
        payload = json.loads(out)
        assert 0.0 <= payload["coverage_probability"] <= 1.0
        assert payload["realizations"] == 32
        assert len(payload["mean_shortfall"]) == 2

    def test_same_seed_same_rows(self, capsys, chain_file, tmp_path):
        report = tmp_path / "report.json"
        run_cli(
            capsys, "solve", "--in", chain_file, "--program", "eg-demand",
            "--budgets", "unit", "--out", str(report),
        )
        args = [
            "evaluate", "--in", chain_file, "--budgets", "unit",
            "--report", str(report), "--realizations", "16", "--seed", "4",
        ]
        _, out_a, _ = run_cli(capsys, *args)
        _, out_b, _ = run_cli(capsys, *args)
        assert out_a == out_b


class TestEntryPoints:
    def test_run_is_main(self):
        assert run is main

    def test_reports_are_byte_deterministic_across_processes(self, capsys, chain_file):
        args = ["solve", "--in", chain_file, "--program", "eg-demand", "--budgets", "unit"]
        _, out_a, _ = run_cli(capsys, *args)
        _, out_b, _ = run_cli(capsys, *args)
        assert out_a == out_b
