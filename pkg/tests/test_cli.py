"""Tests for the click command line."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from src import __version__
from src.main import main
from src.types import ExitCode
from src.utils.reports import read_fit_report
from src.utils.tracefile import write_trace_csv


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def trace_file(tmp_path, exponential_trace):
    return write_trace_csv(exponential_trace, tmp_path / "A_n3.000e+11_dark.csv")


class TestGroup:
    """Global options."""

    def test_version(self, runner):
        result = runner.invoke(main, ["--version"])
        assert result.exit_code == 0
        assert f"rbrelax v{__version__}" in result.output

    def test_help_lists_commands(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for command in ("simulate", "sweep", "fit", "figures", "validate"):
            assert command in result.output


class TestFitCommand:
    """rbrelax fit."""

    def test_fit_writes_report(self, runner, trace_file):
        result = runner.invoke(main, ["-q", "fit", str(trace_file)])
        assert result.exit_code == ExitCode.SUCCESS, result.output
        (entry,) = read_fit_report(trace_file.parent / "fits.json")
        assert entry.trace == trace_file.name
        assert entry.fit.param("gamma") == pytest.approx(250.0, rel=1e-6)
        assert entry.metadata["protocol"] == "A"

    def test_explicit_report_and_noise(self, runner, trace_file, tmp_path):
        report = tmp_path / "out" / "noisy.json"
        result = runner.invoke(
            main, ["-q", "fit", str(trace_file), "--noise", "0.01", "--seed", "3", "-r", str(report)]
        )
        assert result.exit_code == ExitCode.SUCCESS, result.output
        (entry,) = read_fit_report(report)
        assert entry.metadata["noise_seed"] == "3"
        assert entry.fit.param("gamma") == pytest.approx(250.0, rel=0.05)

    def test_flat_trace_is_a_convergence_error(self, runner, tmp_path, trace_factory):
        t = np.linspace(0.0, 0.01, 20)
        path = write_trace_csv(trace_factory(t, np.full(20, 0.4), protocol="A"), tmp_path / "flat.csv")
        result = runner.invoke(main, ["-q", "fit", str(path)])
        assert result.exit_code == ExitCode.CONVERGENCE_ERROR
        assert (tmp_path / "fits.json").exists()

    def test_missing_file(self, runner, tmp_path):
        result = runner.invoke(main, ["-q", "fit", str(tmp_path / "absent.csv")])
        assert result.exit_code == ExitCode.IO_ERROR

    def test_unsupported_extension(self, runner, tmp_path):
        path = tmp_path / "trace.txt"
        path.write_text("time_s,alpha_raw,alpha_norm\n")
        result = runner.invoke(main, ["-q", "fit", str(path)])
        assert result.exit_code == ExitCode.IO_ERROR

    def test_malformed_trace(self, runner, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time_s,alpha_raw,alpha_norm\n0,1\n")
        result = runner.invoke(main, ["-q", "fit", str(path)])
        assert result.exit_code == ExitCode.IO_ERROR

    def test_no_paths(self, runner):
        assert runner.invoke(main, ["-q", "fit"]).exit_code == ExitCode.VALIDATION_ERROR

    def test_unknown_model_rejected_by_click(self, runner, trace_file):
        result = runner.invoke(main, ["fit", str(trace_file), "-m", "gaussian"])
        assert result.exit_code == 2
        assert "gaussian" in result.output


class TestConfigErrors:
    """Config problems stop a command before any simulation."""

    def test_missing_config_name(self, runner, config_dir):
        result = runner.invoke(main, ["-q", "simulate", "--config", "nope"])
        assert result.exit_code == ExitCode.IO_ERROR

    def test_invalid_json(self, runner, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"seed": }')
        result = runner.invoke(main, ["-q", "simulate", "--config", str(path)])
        assert result.exit_code == ExitCode.IO_ERROR

    def test_unknown_key(self, runner, tmp_path):
        path = tmp_path / "typo.json"
        path.write_text(json.dumps({"numerics": {"dopler_groups": 3}}))
        result = runner.invoke(main, ["-q", "sweep", "--config", str(path)])
        assert result.exit_code == ExitCode.VALIDATION_ERROR

    def test_wrong_unit(self, runner, tmp_path):
        path = tmp_path / "units.json"
        path.write_text(json.dumps({"ramsey": {"delay_ms": 0.1}}))
        result = runner.invoke(main, ["-q", "validate", "--config", str(path), "--lenient"])
        assert result.exit_code == ExitCode.VALIDATION_ERROR

    def test_field_override_out_of_range(self, runner):
        result = runner.invoke(main, ["-q", "simulate", "--protocol", "C", "--field", "5"])
        assert result.exit_code == ExitCode.VALIDATION_ERROR

    def test_protocol_choice(self, runner):
        assert runner.invoke(main, ["simulate", "--protocol", "D"]).exit_code == 2


@pytest.mark.slow
class TestValidateCommand:
    """rbrelax validate."""

    def test_invariant_suite_passes(self, runner):
        result = runner.invoke(main, ["validate"])
        assert result.exit_code == ExitCode.SUCCESS, result.output
        assert "All" in result.output


@pytest.mark.slow
class TestSimulateCommand:
    """rbrelax simulate."""

    def test_repeat_runs_write_identical_traces(self, runner, tmp_path):
        outputs = []
        for name in ("first", "second"):
            directory = tmp_path / name
            result = runner.invoke(main, [
                "simulate", "--config", "quick", "--density", "3e11", "--record", "0.005",
                "--no-fit", "--output", str(directory),
            ])
            assert result.exit_code == ExitCode.SUCCESS, result.output
            outputs.append({p.name: p.read_bytes() for p in sorted(directory.glob("*.csv"))})
        assert outputs[0]
        assert outputs[0] == outputs[1]
