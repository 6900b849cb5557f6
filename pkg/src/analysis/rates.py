"""Rates versus density and the exchange cross-section.

Collects the fitted rates of each sweep point into DerivedRates:

    hyperfine population decay    protocol A, exponential gamma
    Zeeman population decay       protocol B, double exponential gamma2
    Zeeman decoherence            protocol C subtracted trace, sinusoid gamma
"""

import math
from dataclasses import dataclass, field

from src.physics.spin_exchange import CrossSectionError, extract_cross_section
from src.types import DerivedRates, FitResult, RateRow
from src.utils.logger import get_logger


# (fit key, parameter) per DerivedRates column
RATE_SOURCES = {
    "hyperfine": ("A", "gamma"),
    "zeeman_population": ("B", "gamma2"),
    "decoherence": ("C", "gamma"),
}


@dataclass
class RatePoint:
    """Fits collected at one density point, keyed by protocol tag."""
    density_cm3: float
    temperature_k: float
    fits: dict[str, FitResult] = field(default_factory=dict)


def _rate(point: RatePoint, column: str) -> tuple[float, float]:
    key, name = RATE_SOURCES[column]
    fit = point.fits.get(key)
    if fit is None or not fit.converged:
        return math.nan, math.nan
    return fit.param(name), fit.error(name)


def derive_rates(points: list[RatePoint]) -> DerivedRates:
    """Build the rates table; the cross-section uses converged hyperfine rates.

    Fewer than 3 usable hyperfine rates or a non-positive slope leave the
    cross-section as NaN with a warning.
    """
    logger = get_logger()
    rows = []
    for point in sorted(points, key=lambda p: p.density_cm3):
        hf, hf_err = _rate(point, "hyperfine")
        zp, zp_err = _rate(point, "zeeman_population")
        dc, dc_err = _rate(point, "decoherence")
        rows.append(RateRow(point.density_cm3, point.temperature_k, hf, hf_err, zp, zp_err, dc, dc_err))

    usable = [r for r in rows if math.isfinite(r.hyperfine)]
    if len(usable) < 3:
        if usable:
            logger.warning(f"Only {len(usable)} hyperfine rates; cross-section not extracted")
        return DerivedRates(tuple(rows))

    errors = [r.hyperfine_err for r in usable]
    weights_ok = all(math.isfinite(e) and e > 0 for e in errors)
    try:
        xs = extract_cross_section(
            [(r.density_cm3, r.hyperfine) for r in usable],
            [r.temperature_k for r in usable],
            errors if weights_ok else None,
        )
    except CrossSectionError as e:
        logger.warning(f"Cross-section not extracted: {e}")
        return DerivedRates(tuple(rows))

    return DerivedRates(
        rows=tuple(rows),
        cross_section_cm2=xs.sigma_cm2,
        cross_section_err_cm2=xs.sigma_err_cm2,
        intercept_per_s=xs.intercept_per_s,
        intercept_err_per_s=xs.intercept_err_per_s,
    )


__all__ = ["RATE_SOURCES", "RatePoint", "derive_rates"]
