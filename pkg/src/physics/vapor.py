"""Rubidium vapor density and diffusion estimates.

Vapor pressure (Torr) of rubidium, solid below the melting point and liquid
above it:

    T < 312.46 K:  log10 P = -94.04826 - 1961.258/T - 0.03771687 T + 42.57526 log10 T
    T >= 312.46 K: log10 P = 15.88253 - 4529.635/T + 0.00058663 T - 2.99138 log10 T

converted to a number density with the ideal-gas law.
"""

import math

from scipy import constants as sc
from scipy.optimize import brentq

from src.types import ExitCode, RelaxError


T_MIN_K = 250.0
T_MAX_K = 450.0
MELTING_POINT_K = 312.46

TORR_TO_PA = 133.322368

# Rb in Ne, lowest diffusion mode reference (cm^2/s at 760 Torr, 273.15 K)
DEFAULT_D0_CM2_S = 0.31
REFERENCE_PRESSURE_TORR = 760.0

# First zero of J0
_BESSEL_ZERO = 2.405


class VaporRangeError(RelaxError):
    """Temperature or density outside the tabulated vapor-pressure range."""
    error_code = ExitCode.VALIDATION_ERROR


def vapor_pressure_torr(temperature_k: float) -> float:
    T = temperature_k
    if T < MELTING_POINT_K:
        log_p = -94.04826 - 1961.258 / T - 0.03771687 * T + 42.57526 * math.log10(T)
    else:
        log_p = 15.88253 - 4529.635 / T + 0.00058663 * T - 2.99138 * math.log10(T)
    return 10.0 ** log_p


def density_from_temperature(temperature_k: float) -> float:
    """Saturated rubidium number density in cm^-3.

    Raises:
        VaporRangeError: Outside 250 K < T < 450 K
    """
    if not T_MIN_K < temperature_k < T_MAX_K:
        raise VaporRangeError(
            f"Temperature {temperature_k} K outside the vapor-pressure range "
            f"({T_MIN_K:g} K, {T_MAX_K:g} K)"
        )
    pressure_pa = vapor_pressure_torr(temperature_k) * TORR_TO_PA
    return pressure_pa / (sc.k * temperature_k) * 1e-6


def temperature_from_density(density_cm3: float) -> float:
    """Inverse of density_from_temperature by bracketed root finding.

    Raises:
        VaporRangeError: If no temperature in range gives the density
    """
    lo, hi = T_MIN_K + 1e-6, T_MAX_K - 1e-6
    if not density_from_temperature(lo) <= density_cm3 <= density_from_temperature(hi):
        raise VaporRangeError(f"Density {density_cm3:.3e} cm^-3 outside the vapor-pressure range")
    return float(brentq(
        lambda t: math.log(density_from_temperature(t) / density_cm3), lo, hi, xtol=1e-9
    ))


def estimate_diffusion_rate(
    radius_cm: float,
    length_cm: float,
    pressure_torr: float,
    d0_cm2_s: float = DEFAULT_D0_CM2_S,
    *,
    temperature_k: float | None = None,
) -> float:
    """Lowest diffusion mode rate D0 (p0/p) [(2.405/R)^2 + (pi/L)^2] in s^-1.

    A suggested value for the uniform relaxation rate; never applied
    automatically. With ``temperature_k`` D0 is scaled as (T / 273.15 K)^1.5.
    """
    if not (radius_cm > 0 and length_cm > 0 and pressure_torr > 0):
        raise ValueError("Cell geometry and buffer pressure must be positive")
    d = d0_cm2_s * REFERENCE_PRESSURE_TORR / pressure_torr
    if temperature_k is not None:
        d *= (temperature_k / 273.15) ** 1.5
    return d * ((_BESSEL_ZERO / radius_cm) ** 2 + (math.pi / length_cm) ** 2)


__all__ = [
    "VaporRangeError",
    "vapor_pressure_torr",
    "density_from_temperature",
    "temperature_from_density",
    "estimate_diffusion_rate",
]
