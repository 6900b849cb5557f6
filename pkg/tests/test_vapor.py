"""Tests for vapor density and diffusion estimates."""

import math

import pytest

from src.physics.vapor import (
    VaporRangeError,
    density_from_temperature,
    estimate_diffusion_rate,
    temperature_from_density,
    vapor_pressure_torr,
)


class TestVaporPressure:
    """Density versus temperature."""

    def test_density_near_330_k(self):
        assert density_from_temperature(330.0) == pytest.approx(1.92e11, rel=0.02)

    def test_density_increases_with_temperature(self):
        temps = [280.0, 300.0, 312.0, 313.0, 340.0, 400.0]
        densities = [density_from_temperature(t) for t in temps]
        assert densities == sorted(densities)

    def test_pressure_continuous_at_melting_point(self):
        below = vapor_pressure_torr(312.46 - 1e-6)
        above = vapor_pressure_torr(312.46 + 1e-6)
        assert above == pytest.approx(below, rel=0.05)

    @pytest.mark.parametrize("temperature", [260.0, 312.0, 330.0, 373.0, 440.0])
    def test_round_trip(self, temperature):
        recovered = temperature_from_density(density_from_temperature(temperature))
        assert recovered == pytest.approx(temperature, abs=1e-6)

    @pytest.mark.parametrize("temperature", [250.0, 200.0, 450.0, 500.0])
    def test_temperature_out_of_range(self, temperature):
        with pytest.raises(VaporRangeError):
            density_from_temperature(temperature)

    @pytest.mark.parametrize("density", [1.0, 1e20])
    def test_density_out_of_range(self, density):
        with pytest.raises(VaporRangeError):
            temperature_from_density(density)


class TestDiffusion:
    """Lowest diffusion mode."""

    def test_rate_formula(self):
        expected = 0.31 * 760.0 / 30.0 * ((2.405 / 1.25) ** 2 + (math.pi / 5.0) ** 2)
        assert estimate_diffusion_rate(1.25, 5.0, 30.0) == pytest.approx(expected)

    def test_higher_pressure_slows_diffusion(self):
        assert estimate_diffusion_rate(1.25, 5.0, 60.0) < estimate_diffusion_rate(1.25, 5.0, 30.0)

    def test_temperature_scaling(self):
        base = estimate_diffusion_rate(1.25, 5.0, 30.0)
        hot = estimate_diffusion_rate(1.25, 5.0, 30.0, temperature_k=273.15 * 1.21)
        assert hot == pytest.approx(base * 1.21**1.5)

    def test_invalid_geometry(self):
        with pytest.raises(ValueError):
            estimate_diffusion_rate(0.0, 5.0, 30.0)
