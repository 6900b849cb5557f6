"""Tests for rates versus density."""

import math

import numpy as np
import pytest

from src.analysis.rates import RATE_SOURCES, RatePoint, derive_rates
from src.physics.spin_exchange import mean_relative_speed
from src.types import FitResult


def fit(model: str, names: tuple[str, ...], values: dict[str, float], converged: bool = True) -> FitResult:
    params = np.array([values.get(n, 1.0) for n in names])
    return FitResult(model, names, params, 0.01 * np.abs(params) + 1e-3, 1e-4, converged, 10)


def hyperfine(gamma: float, converged: bool = True) -> FitResult:
    return fit("exponential", ("A", "gamma", "C"), {"gamma": gamma}, converged)


class TestDeriveRates:
    """Rate table and cross-section."""

    def test_rate_sources(self):
        assert RATE_SOURCES["hyperfine"] == ("A", "gamma")
        assert RATE_SOURCES["zeeman_population"] == ("B", "gamma2")
        assert RATE_SOURCES["decoherence"] == ("C", "gamma")

    def test_cross_section_from_hyperfine_rates(self):
        v = mean_relative_speed(330.0)
        points = [
            RatePoint(n, 330.0, {"A": hyperfine(2e-14 * n * v + 50.0)})
            for n in (9e11, 1e11, 5e11, 3e11)
        ]
        rates = derive_rates(points)
        assert [r.density_cm3 for r in rates.rows] == [1e11, 3e11, 5e11, 9e11]
        assert rates.cross_section_cm2 == pytest.approx(2e-14, rel=1e-6)
        assert rates.intercept_per_s == pytest.approx(50.0, rel=1e-4)

    def test_other_columns(self):
        point = RatePoint(3e11, 330.0, {
            "B": fit("double_exponential", ("A1", "gamma1", "A2", "gamma2", "C"),
                     {"gamma1": 900.0, "gamma2": 60.0}),
            "C": fit("decaying_sinusoid", ("A", "gamma", "omega", "phi", "C"), {"gamma": 120.0}),
        })
        row = derive_rates([point]).rows[0]
        assert row.zeeman_population == 60.0
        assert row.decoherence == 120.0
        assert math.isnan(row.hyperfine)

    def test_failed_fits_are_nan(self):
        row = derive_rates([RatePoint(3e11, 330.0, {"A": hyperfine(300.0, converged=False)})]).rows[0]
        assert math.isnan(row.hyperfine) and math.isnan(row.hyperfine_err)

    def test_too_few_points_leave_cross_section_nan(self):
        points = [RatePoint(n, 330.0, {"A": hyperfine(100.0 + n * 1e-9)}) for n in (1e11, 2e11)]
        rates = derive_rates(points)
        assert len(rates.rows) == 2
        assert math.isnan(rates.cross_section_cm2)

    def test_decreasing_rates_leave_cross_section_nan(self):
        points = [RatePoint(n, 330.0, {"A": hyperfine(g)}) for n, g in ((1e11, 300.0), (2e11, 200.0), (3e11, 100.0))]
        assert math.isnan(derive_rates(points).cross_section_cm2)
