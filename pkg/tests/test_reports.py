"""Tests for fit and rate reports."""

import json
import math

import numpy as np
import pytest

from src.types import DerivedRates, FitResult, RateRow
from src.utils.reports import (
    FIT_SCHEMA,
    RATES_SCHEMA,
    FitEntry,
    ReportFormatError,
    read_fit_report,
    read_rates_report,
    write_fit_report,
    write_rates_report,
)


@pytest.fixture
def fit_result():
    return FitResult(
        "exponential", ("A", "gamma", "C"), np.array([0.8, 250.0, 0.1]),
        np.array([1e-3, 0.5, 1e-4]), 2e-4, True, 7, 1e-9, "gradient below tolerance",
    )


@pytest.fixture
def rates():
    return DerivedRates(
        rows=(
            RateRow(1e11, 310.0, hyperfine=130.0, hyperfine_err=1.0),
            RateRow(3e11, 320.0, hyperfine=290.0, hyperfine_err=1.5, decoherence=150.0, decoherence_err=2.0),
        ),
        cross_section_cm2=2e-14,
        cross_section_err_cm2=1e-16,
        intercept_per_s=50.0,
        intercept_err_per_s=0.5,
    )


class TestFitReports:
    """fits.json documents."""

    def test_round_trip(self, tmp_path, fit_result):
        entries = [FitEntry("A_n1e11.csv", fit_result, {"protocol": "A"})]
        path = write_fit_report(tmp_path / "fits.json", entries)
        assert json.loads(path.read_text())["schema"] == FIT_SCHEMA
        (back,) = read_fit_report(path)
        assert back.trace == "A_n1e11.csv"
        assert back.metadata == {"protocol": "A"}
        assert back.fit.param("gamma") == 250.0
        assert back.fit.converged and back.fit.iterations == 7
        assert back.fit.message == "gradient below tolerance"

    def test_failed_fit_keeps_nan(self, tmp_path, fit_result):
        fit_result.params[:] = np.nan
        fit_result.converged = False
        (back,) = read_fit_report(write_fit_report(tmp_path / "fits.json", [FitEntry("x.csv", fit_result)]))
        assert np.all(np.isnan(back.fit.params))
        assert not back.fit.converged

    def test_wrong_schema(self, tmp_path):
        path = tmp_path / "fits.json"
        path.write_text(json.dumps({"schema": RATES_SCHEMA, "fits": []}))
        with pytest.raises(ReportFormatError, match=FIT_SCHEMA):
            read_fit_report(path)

    def test_malformed_entry(self, tmp_path):
        path = tmp_path / "fits.json"
        path.write_text(json.dumps({"schema": FIT_SCHEMA, "fits": [{"trace": "x.csv"}]}))
        with pytest.raises(ReportFormatError, match="Malformed"):
            read_fit_report(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "fits.json"
        path.write_text("{")
        with pytest.raises(ReportFormatError, match="line 1"):
            read_fit_report(path)


class TestRatesReports:
    """rates.json and rates.csv."""

    def test_round_trip(self, tmp_path, rates):
        report, table = write_rates_report(tmp_path, rates)
        assert report.name == "rates.json" and table.name == "rates.csv"
        back = read_rates_report(report)
        assert back.cross_section_cm2 == 2e-14
        assert back.rows[1].decoherence == 150.0
        assert math.isnan(back.rows[0].decoherence)

    def test_table(self, tmp_path, rates):
        _, table = write_rates_report(tmp_path, rates, stem="sweep")
        lines = table.read_text().splitlines()
        assert lines[0] == "# cross_section_cm2=2e-14"
        assert lines[2].startswith("density_cm3,temperature_k,hyperfine,")
        assert len(lines) == 5
        assert lines[3].split(",")[:3] == ["100000000000", "310", "130"]

    def test_missing_field(self, tmp_path):
        path = tmp_path / "rates.json"
        path.write_text(json.dumps({"schema": RATES_SCHEMA, "rows": []}))
        with pytest.raises(ReportFormatError):
            read_rates_report(path)
