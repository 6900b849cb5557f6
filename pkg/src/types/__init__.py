"""Type definitions for rbrelax.

This module contains the enums, dataclasses and type aliases shared by the
physics engine, the fitting layer and the CLI. Centralizing them here keeps
the data structures that cross module boundaries in one place.

Types defined:
    - ExitCode: CLI exit codes for different error conditions
    - RelaxError: Base exception carrying an exit code
    - ProtocolTag / PolarizationName / FitModelName: Literal aliases
    - LaserSpec, CellSpec, RelaxationSpec, SpinExchangeSpec, RamseySpec: config sections
    - ExperimentSpec: Declarative description of one pump/probe experiment
    - SweepSpec, NumericsSpec, OutputSpec, RunConfig: Full run configuration
    - DecayTrace: Sampled absorption versus time with metadata
    - FitResult: Fitted model parameters with uncertainties
    - RateRow, DerivedRates: Rates versus density and the exchange cross-section
    - ValidationResult: Result of validation operations
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Literal

import numpy as np


class ExitCode(IntEnum):
    """Exit codes for CLI operations.

    Attributes:
        SUCCESS: Operation completed successfully (0)
        UNEXPECTED_ERROR: Unhandled exception (1)
        VALIDATION_ERROR: Invalid configuration, input or failed invariant (2)
        CONVERGENCE_ERROR: Fit, steady state or self-consistency did not converge (3)
        IO_ERROR: Unreadable or malformed file, unwritable output (4)
        INTERRUPT: User interrupted with Ctrl+C (130, standard Unix convention)
    """
    SUCCESS = 0
    UNEXPECTED_ERROR = 1
    VALIDATION_ERROR = 2
    CONVERGENCE_ERROR = 3
    IO_ERROR = 4
    INTERRUPT = 130  # 128 + SIGINT


class RelaxError(Exception):
    """Base class for all rbrelax errors.

    Subclasses set ``error_code`` so command handlers can map any failure
    to an exit status without knowing the concrete type.
    """
    error_code: ExitCode = ExitCode.VALIDATION_ERROR


# Type aliases for constrained string literals

ProtocolTag = Literal["A", "B", "C"]
"""Pump/probe protocol.
- "A": hyperfine population decay (linear pump and probe on F=1 -> F'=2)
- "B": Zeeman population decay (circular pump and probe)
- "C": Zeeman decoherence (balanced sigma+/sigma- on F=2 -> F'=1, Ramsey field)
"""

PolarizationName = Literal["sigma+", "sigma-", "pi", "linear"]
"""Laser polarization relative to the z quantization axis.
- "sigma+" / "sigma-": circular, q = +1 / -1
- "pi": q = 0
- "linear": x polarization, equal-weight q = +1 and q = -1 components
"""

FitModelName = Literal["exponential", "double_exponential", "decaying_sinusoid"]
"""Decay models understood by the fitting layer."""


@dataclass(frozen=True)
class LaserSpec:
    """One laser as written in a config file.

    Attributes:
        transition: (F, F') pair the laser is tuned to
        polarization: Polarization name
        power_mw: Power in mW, mapped to a Rabi frequency by the calibration
        detuning_hz: Detuning from the target transition (Hz)
    """
    transition: tuple[int, int]
    polarization: PolarizationName
    power_mw: float
    detuning_hz: float = 0.0


@dataclass(frozen=True)
class CellSpec:
    """Vapor cell geometry and buffer gas.

    Attributes:
        length_cm: Cell length
        radius_cm: Cell radius
        buffer_pressure_torr: Neon pressure
        beam_waist_cm: Laser beam waist (informational, single effective Rabi scale)
        temperature_k: Fixed temperature, or None to derive it from the density
    """
    length_cm: float = 5.0
    radius_cm: float = 1.25
    buffer_pressure_torr: float = 30.0
    beam_waist_cm: float = 0.6
    temperature_k: float | None = None


@dataclass(frozen=True)
class RelaxationSpec:
    """Uniform relaxation and optical broadening."""
    gamma0_per_s: float = 50.0
    pressure_broadening_hz_per_torr: float = 9.84e6


@dataclass(frozen=True)
class SpinExchangeSpec:
    """Spin-exchange settings independent of density and temperature."""
    cross_section_cm2: float = 2.05e-14
    refresh_s: float | None = None
    tolerance: float = 1e-8
    max_iterations: int = 50
    iterate_segments: bool = False


@dataclass(frozen=True)
class RamseySpec:
    """Protocol C field schedule and probe train.

    Attributes:
        b_field_gauss: Axial field switched on after the delay
        delay_s: Delay between pump shut-off and field switch-on
        residual_field_gauss: Field during the nominally dark delay
        probe_pulse_s: Probe pulse length
        probe_duty_cycle: Fraction of each probe period the probe is on
    """
    b_field_gauss: float = 1e-3
    delay_s: float = 1e-4
    residual_field_gauss: float = 0.0
    probe_pulse_s: float = 5e-6
    probe_duty_cycle: float = 0.05


@dataclass(frozen=True)
class ExperimentSpec:
    """Declarative description of one pump/probe experiment.

    Attributes:
        protocol: Protocol tag
        pump: Pump laser
        probe: Probe laser
        pump_duration_s: Maximum pumping time
        probe_pulse_s: Probe pulse length for protocols A and B
        probe_duty_cycle: Probe duty cycle for protocols A and B
        record_s: Recording window after pump shut-off, None for automatic
        cell: Cell geometry
        relaxation: Uniform relaxation settings
        spin_exchange: Spin-exchange settings
        ramsey: Protocol C schedule
    """
    protocol: ProtocolTag
    pump: LaserSpec
    probe: LaserSpec
    pump_duration_s: float = 2.0
    probe_pulse_s: float = 50e-6
    probe_duty_cycle: float = 0.05
    record_s: float | None = None
    cell: CellSpec = field(default_factory=CellSpec)
    relaxation: RelaxationSpec = field(default_factory=RelaxationSpec)
    spin_exchange: SpinExchangeSpec = field(default_factory=SpinExchangeSpec)
    ramsey: RamseySpec = field(default_factory=RamseySpec)

    @property
    def probe_period_s(self) -> float:
        """Probe repetition period for this protocol."""
        if self.protocol == "C":
            return self.ramsey.probe_pulse_s / self.ramsey.probe_duty_cycle
        return self.probe_pulse_s / self.probe_duty_cycle

    @property
    def probe_length_s(self) -> float:
        """Probe pulse length for this protocol."""
        return self.ramsey.probe_pulse_s if self.protocol == "C" else self.probe_pulse_s


@dataclass(frozen=True)
class SweepSpec:
    """Sweep lists.

    Attributes:
        densities_cm3: Rubidium densities (used when temperatures_k is empty)
        temperatures_k: Cell temperatures, density derived from vapor pressure
        b_fields_gauss: Protocol C field magnitudes
        delays_s: Protocol C delays; empty means [delay, antiphase delay]
        protocols: Protocols run by ``sweep``
    """
    densities_cm3: tuple[float, ...] = (1e11, 3e11, 5e11, 7e11, 9e11)
    temperatures_k: tuple[float, ...] = ()
    b_fields_gauss: tuple[float, ...] = (1e-3,)
    delays_s: tuple[float, ...] = ()
    protocols: tuple[ProtocolTag, ...] = ("A", "B", "C")


@dataclass(frozen=True)
class NumericsSpec:
    """Numerical knobs.

    Attributes:
        doppler_groups: Gauss-Hermite velocity groups (1 means v = 0 only)
        steady_state_tol: Pump residual tolerance in units of the natural linewidth
        pump_initial_step_s: First pump chunk, doubled until steady state
        probe_weakness_ratio: Largest allowed probe Rabi frequency / optical half-width
        back_action_limit: Largest allowed ground population change per probe pulse
        cumulative_back_action_limit: Largest summed probe population change over a record,
            relative to the initial deviation from thermal and per decay constant recorded
        settle_lifetimes: Optical lifetimes the probe coherence is settled for
        rabi_at_1mw_hz: Rabi frequency / 2 pi produced by 1 mW of laser power
        record_decay_constants: Automatic record length in units of the expected decay time
        min_record_samples: Fewest probe samples per decay record for protocols A and B
        workers: Worker processes for sweeps (1 = in-process)
    """
    doppler_groups: int = 1
    steady_state_tol: float = 1e-9
    pump_initial_step_s: float = 1e-4
    probe_weakness_ratio: float = 0.01
    back_action_limit: float = 0.005
    cumulative_back_action_limit: float = 0.05
    settle_lifetimes: float = 20.0
    rabi_at_1mw_hz: float = 1.464e6
    record_decay_constants: float = 6.0
    min_record_samples: int = 64
    workers: int = 1


@dataclass(frozen=True)
class OutputSpec:
    """Output location and options."""
    directory: str = "output"
    fit_raw: bool = False
    overwrite: bool = True


@dataclass(frozen=True)
class RunConfig:
    """Complete, validated run configuration.

    Attributes:
        experiment: The experiment to simulate
        sweep: Sweep lists
        numerics: Numerical knobs
        output: Output options
        constants_file: Path to a constants JSON file, None for the shipped one
        seed: Seed for the synthetic-noise utilities
        source: Where the config came from (path or name), for reports
    """
    experiment: ExperimentSpec
    sweep: SweepSpec = field(default_factory=SweepSpec)
    numerics: NumericsSpec = field(default_factory=NumericsSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    constants_file: str | None = None
    seed: int = 0
    source: str = "<defaults>"


@dataclass
class DecayTrace:
    """Sampled absorption versus time.

    Attributes:
        times: Sample times in seconds, strictly increasing
        alpha_raw: Raw absorption values
        alpha_norm: Normalized absorption (alpha - alpha_ss) / (alpha_ini - alpha_ss)
        metadata: String key/value pairs (protocol, density, field, delay, ...)
        populations: Optional (n_samples, 8) ground populations at each sample
    """
    times: np.ndarray
    alpha_raw: np.ndarray
    alpha_norm: np.ndarray
    metadata: dict[str, str] = field(default_factory=dict)
    populations: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.alpha_raw = np.asarray(self.alpha_raw, dtype=float)
        self.alpha_norm = np.asarray(self.alpha_norm, dtype=float)
        n = self.times.shape[0]
        if self.alpha_raw.shape != (n,) or self.alpha_norm.shape != (n,):
            raise ValueError(
                f"Trace arrays must have equal length, got {n}, "
                f"{self.alpha_raw.shape[0]} and {self.alpha_norm.shape[0]}"
            )
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("Trace time stamps must be strictly increasing")
        if self.populations is not None:
            self.populations = np.asarray(self.populations, dtype=float)
            if self.populations.shape[0] != n:
                raise ValueError("Population record length does not match the trace")

    def __len__(self) -> int:
        return int(self.times.shape[0])

    @property
    def protocol(self) -> str:
        return self.metadata.get("protocol", "")

    def meta_float(self, key: str, default: float | None = None) -> float | None:
        """Metadata value converted to float, or default when absent."""
        value = self.metadata.get(key)
        return default if value is None else float(value)

    def window(self, t_min: float) -> "DecayTrace":
        """Return the part of the trace with t >= t_min."""
        keep = self.times >= t_min
        pops = self.populations[keep] if self.populations is not None else None
        return DecayTrace(
            self.times[keep], self.alpha_raw[keep], self.alpha_norm[keep],
            dict(self.metadata), pops,
        )


@dataclass
class FitResult:
    """Result of a nonlinear least-squares fit.

    Attributes:
        model: Model tag
        names: Parameter names in model order
        params: Best-fit parameters
        errors: 1-sigma uncertainties (>= 0)
        rms_residual: Root-mean-square residual
        converged: A stopping criterion was met and the covariance is finite
        iterations: Iterations used
        gradient_norm: Final scaled gradient measure
        message: Stop reason or failure diagnostic
    """
    model: str
    names: tuple[str, ...]
    params: np.ndarray
    errors: np.ndarray
    rms_residual: float
    converged: bool
    iterations: int
    gradient_norm: float = 0.0
    message: str = ""

    def param(self, name: str) -> float:
        return float(self.params[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.errors[self.names.index(name)])

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "names": list(self.names),
            "params": [float(p) for p in self.params],
            "errors": [float(e) for e in self.errors],
            "rms_residual": float(self.rms_residual),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "gradient_norm": float(self.gradient_norm),
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FitResult":
        return cls(
            model=str(data["model"]),
            names=tuple(data["names"]),
            params=np.array(data["params"], dtype=float),
            errors=np.array(data["errors"], dtype=float),
            rms_residual=float(data["rms_residual"]),
            converged=bool(data["converged"]),
            iterations=int(data["iterations"]),
            gradient_norm=float(data.get("gradient_norm", 0.0)),
            message=str(data.get("message", "")),
        )


@dataclass(frozen=True)
class RateRow:
    """Fitted rates at one density point (s^-1); NaN when not measured."""
    density_cm3: float
    temperature_k: float
    hyperfine: float = float("nan")
    hyperfine_err: float = float("nan")
    zeeman_population: float = float("nan")
    zeeman_population_err: float = float("nan")
    decoherence: float = float("nan")
    decoherence_err: float = float("nan")


@dataclass(frozen=True)
class DerivedRates:
    """Rates versus density plus the extracted exchange cross-section."""
    rows: tuple[RateRow, ...]
    cross_section_cm2: float = float("nan")
    cross_section_err_cm2: float = float("nan")
    intercept_per_s: float = float("nan")
    intercept_err_per_s: float = float("nan")


@dataclass
class ValidationResult:
    """Result of a validation operation.

    Attributes:
        valid: True if validation passed
        error: Error message if validation failed
        error_code: Exit code to use if validation failed
    """
    valid: bool
    error: str | None = None
    error_code: ExitCode | None = None


__all__ = [
    "ExitCode",
    "RelaxError",
    "ProtocolTag",
    "PolarizationName",
    "FitModelName",
    "LaserSpec",
    "CellSpec",
    "RelaxationSpec",
    "SpinExchangeSpec",
    "RamseySpec",
    "ExperimentSpec",
    "SweepSpec",
    "NumericsSpec",
    "OutputSpec",
    "RunConfig",
    "DecayTrace",
    "FitResult",
    "RateRow",
    "DerivedRates",
    "ValidationResult",
]
