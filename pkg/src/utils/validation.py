"""Input validation utilities for rbrelax.

Provides validation functions for:
- Input files (trace CSV and fit reports)
- Output directories (writability, existing files)
- Run configurations (ranges of every physical quantity)
"""

import math
import os
from pathlib import Path

from src.physics.atomic_structure import MAX_FIELD_GAUSS
from src.physics.protocols import MAX_RESIDUAL_FIELD_GAUSS
from src.physics.vapor import T_MAX_K, T_MIN_K
from src.types import ExitCode, LaserSpec, RunConfig, ValidationResult


SUPPORTED_FORMATS = {
    ".csv",   # traces and rate tables
    ".json",  # fit reports
}

VALID_TRANSITIONS = {(1, 1), (1, 2), (2, 1), (2, 2)}


def _invalid(message: str, code: ExitCode = ExitCode.VALIDATION_ERROR) -> ValidationResult:
    return ValidationResult(valid=False, error=message, error_code=code)


def validate_input_file(path: str) -> ValidationResult:
    """Validate that an input file exists, is readable and has a supported format.

    Args:
        path: Path to a trace CSV or fit report

    Returns:
        ValidationResult with valid=True if all checks pass,
        otherwise valid=False with error message and error_code
    """
    file_path = Path(path)

    if not file_path.exists():
        return _invalid(f"Input file not found: {path}", ExitCode.IO_ERROR)

    if not file_path.is_file():
        return _invalid(f"Input path is not a file: {path}", ExitCode.IO_ERROR)

    if not os.access(file_path, os.R_OK):
        return _invalid(f"Input file is not readable: {path}", ExitCode.IO_ERROR)

    extension = file_path.suffix.lower()
    if extension not in SUPPORTED_FORMATS:
        supported_list = ", ".join(sorted(SUPPORTED_FORMATS))
        return _invalid(
            f"Unsupported file format '{extension}'. Supported formats: {supported_list}",
            ExitCode.IO_ERROR,
        )

    return ValidationResult(valid=True)


def validate_output_dir(path: str, overwrite: bool = True) -> ValidationResult:
    """Validate the output directory is writable.

    With ``overwrite`` False a directory already holding trace files is
    rejected.
    """
    dir_path = Path(path)

    if dir_path.exists():
        if not dir_path.is_dir():
            return _invalid(f"Output path exists but is not a directory: {path}", ExitCode.IO_ERROR)

        if not os.access(dir_path, os.W_OK):
            return _invalid(f"Output directory is not writable: {path}", ExitCode.IO_ERROR)

        if not overwrite and any(dir_path.glob("*.csv")):
            return _invalid(
                "Output directory contains existing .csv files. Use --overwrite to replace them.",
                ExitCode.IO_ERROR,
            )
    else:
        # Find the first existing parent
        check_path = dir_path.parent
        while not check_path.exists() and check_path != check_path.parent:
            check_path = check_path.parent

        if check_path.exists() and not os.access(check_path, os.W_OK):
            return _invalid(
                f"Cannot create output directory (insufficient permissions): {path}",
                ExitCode.IO_ERROR,
            )

    return ValidationResult(valid=True)


def validate_field(b_z: float) -> ValidationResult:
    if not math.isfinite(b_z) or abs(b_z) > MAX_FIELD_GAUSS:
        return _invalid(f"Field {b_z} G outside [-{MAX_FIELD_GAUSS:g}, {MAX_FIELD_GAUSS:g}] G")
    return ValidationResult(valid=True)


def validate_density(density_cm3: float) -> ValidationResult:
    if not (math.isfinite(density_cm3) and density_cm3 > 0):
        return _invalid(f"Density must be positive, got {density_cm3} cm^-3")
    return ValidationResult(valid=True)


def validate_temperature(temperature_k: float) -> ValidationResult:
    if not T_MIN_K < temperature_k < T_MAX_K:
        return _invalid(f"Temperature {temperature_k} K outside ({T_MIN_K:g}, {T_MAX_K:g}) K")
    return ValidationResult(valid=True)


def _validate_laser(role: str, laser: LaserSpec) -> ValidationResult:
    if tuple(laser.transition) not in VALID_TRANSITIONS:
        return _invalid(f"{role}.transition {list(laser.transition)} is not a D1 hyperfine pair")
    if not (math.isfinite(laser.power_mw) and laser.power_mw >= 0):
        return _invalid(f"{role}.power_mw must be >= 0, got {laser.power_mw}")
    if not math.isfinite(laser.detuning_hz):
        return _invalid(f"{role}.detuning_hz must be finite")
    return ValidationResult(valid=True)


def validate_run_config(config: RunConfig) -> ValidationResult:
    """Check every range constraint of a run configuration.

    Checks:
    - Lasers on D1 hyperfine pairs with non-negative power
    - Positive cell geometry, non-negative buffer pressure and rates
    - Probe pulse shorter than its period
    - Fields within +-1 G, residual field within 50 uG
    - Sweep densities positive, temperatures within the vapor-pressure range
    - Numerical knobs positive
    """
    exp = config.experiment
    checks = [_validate_laser("pump", exp.pump), _validate_laser("probe", exp.probe)]
    for check in checks:
        if not check.valid:
            return check

    cell = exp.cell
    if not (cell.length_cm > 0 and cell.radius_cm > 0 and cell.beam_waist_cm > 0):
        return _invalid("cell: length_cm, radius_cm and beam_waist_cm must be positive")
    if cell.buffer_pressure_torr < 0:
        return _invalid("cell.buffer_pressure_torr must be >= 0")
    if cell.temperature_k is not None:
        result = validate_temperature(cell.temperature_k)
        if not result.valid:
            return result

    if exp.relaxation.gamma0_per_s < 0 or exp.relaxation.pressure_broadening_hz_per_torr < 0:
        return _invalid("relaxation rates must be >= 0")

    se = exp.spin_exchange
    if se.cross_section_cm2 < 0:
        return _invalid("spin_exchange.cross_section_cm2 must be >= 0")
    if se.refresh_s is not None and not se.refresh_s > 0:
        return _invalid("spin_exchange.refresh_s must be positive")
    if not (se.tolerance > 0 and se.max_iterations >= 1):
        return _invalid("spin_exchange: tolerance must be positive and max_iterations >= 1")

    for label, pulse, duty in (
        ("experiment", exp.probe_pulse_s, exp.probe_duty_cycle),
        ("ramsey", exp.ramsey.probe_pulse_s, exp.ramsey.probe_duty_cycle),
    ):
        if not pulse > 0:
            return _invalid(f"{label}.probe_pulse_s must be positive")
        if not 0 < duty < 1:
            return _invalid(f"{label}.probe_duty_cycle must be in (0, 1), got {duty}")

    if not exp.pump_duration_s > 0:
        return _invalid("experiment.pump_duration_s must be positive")
    if exp.record_s is not None and not exp.record_s > 0:
        return _invalid("experiment.record_s must be positive")

    ramsey = exp.ramsey
    result = validate_field(ramsey.b_field_gauss)
    if not result.valid:
        return result
    if abs(ramsey.residual_field_gauss) > MAX_RESIDUAL_FIELD_GAUSS:
        return _invalid(
            f"ramsey.residual_field_gauss {ramsey.residual_field_gauss:g} exceeds "
            f"{MAX_RESIDUAL_FIELD_GAUSS:g} G"
        )
    if ramsey.delay_s < 0:
        return _invalid("ramsey.delay_s must be >= 0")

    sweep = config.sweep
    if not sweep.densities_cm3 and not sweep.temperatures_k:
        return _invalid("sweep needs densities_cm3 or temperatures_k")
    for n in sweep.densities_cm3:
        result = validate_density(n)
        if not result.valid:
            return result
    for t in sweep.temperatures_k:
        result = validate_temperature(t)
        if not result.valid:
            return result
    for b in sweep.b_fields_gauss:
        result = validate_field(b)
        if not result.valid:
            return result
    if any(d < 0 for d in sweep.delays_s):
        return _invalid("sweep.delays_s must be >= 0")
    if len(sweep.delays_s) not in (0, 2):
        return _invalid("sweep.delays_s takes exactly two delays (or none for the antiphase pair)")
    if not sweep.protocols:
        return _invalid("sweep.protocols is empty")

    num = config.numerics
    if num.doppler_groups < 1 or num.workers < 1:
        return _invalid("numerics: doppler_groups and workers must be >= 1")
    if num.min_record_samples < 8:
        return _invalid("numerics.min_record_samples must be >= 8")
    for name in (
        "steady_state_tol", "pump_initial_step_s", "probe_weakness_ratio",
        "back_action_limit", "cumulative_back_action_limit", "settle_lifetimes", "rabi_at_1mw_hz",
        "record_decay_constants",
    ):
        if not getattr(num, name) > 0:
            return _invalid(f"numerics.{name} must be positive")

    return ValidationResult(valid=True)


__all__ = [
    "SUPPORTED_FORMATS",
    "VALID_TRANSITIONS",
    "validate_input_file",
    "validate_output_dir",
    "validate_field",
    "validate_density",
    "validate_temperature",
    "validate_run_config",
]
