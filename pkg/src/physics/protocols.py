"""Pump/probe protocol execution.

Three experiments, each starting from the optically pumped steady state:

    A  linear pump and probe on F=1 -> F'=2, relaxation in the dark
    B  sigma+ pump and probe (F=1 -> F'=2 or F=2 -> F'=1), relaxation in the dark
    C  balanced sigma+/sigma- pump and probe on F=2 -> F'=1, then a small
       axial field switched on after a delay (Ramsey-like phase evolution)

The dark evolution is sampled stroboscopically with weak probe pulses. Each
pulse contributes one absorption sample, taken at the start of the pulse.

Usage:
    engine = ProtocolEngine(spec, numerics, density_cm3=3.8e11)
    rho_ss = engine.run_pump_to_steady_state()
    trace = engine.run_relaxation_in_dark(rho_ss)
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from src.analysis.fitting import normalize_trace
from src.physics.atomic_structure import (
    MU_B_OVER_HBAR,
    NUM_GROUND,
    LevelScheme,
    build_level_scheme,
    check_field,
    load_constants,
    manifold_indices,
    reference_states,
    thermal_state,
)
from src.physics.liouville import (
    DensityMatrix,
    ExponentialCache,
    FieldConfig,
    LaserComponent,
    Liouvillian,
    PositivityError,
    ProbeBackActionError,
    ProbeSettings,
    RelaxationConfig,
    absorption_coefficient,
    build_dynamics,
    check_back_action,
    density_matrix_violations,
    doppler_average,
    doppler_nodes,
    get_exponential_cache,
    pressure_broadening,
    propagate,
    rabi_from_power,
    vec,
)
from src.physics.spin_exchange import (
    SpinExchangeConfig,
    collision_liouvillian,
    mean_field_from,
    se_rate,
    self_consistent_evolve,
)
from src.physics.vapor import temperature_from_density
from src.types import DecayTrace, ExitCode, ExperimentSpec, LaserSpec, NumericsSpec, RelaxError
from src.utils.logger import get_logger


# Largest residual field accepted for the nominally dark delay (gauss)
MAX_RESIDUAL_FIELD_GAUSS = 50e-6

PROTOCOL_MODELS = {"A": "exponential", "B": "double_exponential"}


class SteadyStateError(RelaxError):
    """Pumping did not reach steady state within the pump duration."""
    error_code = ExitCode.CONVERGENCE_ERROR


class TraceMismatchError(RelaxError):
    """Traces cannot be combined (no common time range)."""
    error_code = ExitCode.VALIDATION_ERROR


@dataclass(frozen=True)
class Segment:
    """One constant-field interval.

    Attributes:
        duration: Length in seconds (> 0)
        fields: Fields applied during the interval
        probe: Probe used to sample absorption at the interval start, or None
    """
    duration: float
    fields: FieldConfig
    probe: FieldConfig | None = None

    @property
    def sample(self) -> bool:
        return self.probe is not None


@dataclass(frozen=True)
class PulseSequence:
    """Ordered segments of one run."""
    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        for i, seg in enumerate(self.segments):
            if not seg.duration > 0:
                raise ValueError(f"Segment {i} has non-positive duration {seg.duration}")

    @property
    def total_duration(self) -> float:
        return float(sum(seg.duration for seg in self.segments))

    def sample_times(self) -> np.ndarray:
        times, t = [], 0.0
        for seg in self.segments:
            if seg.sample:
                times.append(t)
            t += seg.duration
        return np.array(times)


@dataclass
class SequenceResult:
    """Samples and final state of an executed sequence."""
    times: np.ndarray
    alpha: np.ndarray
    populations: np.ndarray
    final: DensityMatrix
    max_back_action: float = 0.0
    cumulative_back_action: float = 0.0


@dataclass(frozen=True)
class DarkStateWeights:
    """Weights of the reference states in the normalized F=2 block.

    Attributes:
        lam: <Lambda|rho|Lambda>
        m_state: <M|rho|M>
        lam_star: <Lambda*|rho|Lambda*>
        residual: Frobenius distance from the block to w_lam |Lambda><Lambda| + w_m |M><M|
        f2_population: Total F=2 population before normalization
    """
    lam: float
    m_state: float
    lam_star: float
    residual: float
    f2_population: float


@dataclass
class ProtocolRun:
    """Steady state and traces of one protocol at one density point."""
    protocol: str
    density_cm3: float
    temperature_k: float
    b_field_gauss: float
    steady_state: DensityMatrix
    traces: dict[str, DecayTrace] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, float, float]:
        return (self.protocol, self.density_cm3, self.b_field_gauss)


def build_probe_train(
    record_s: float,
    period_s: float,
    pulse_s: float,
    probe_at: Callable[[float], FieldConfig],
    field_schedule: Sequence[tuple[float, float]] = ((0.0, 0.0),),
) -> PulseSequence:
    """Stroboscopic probe pulses with a piecewise-constant field schedule.

    Pulses start at k * period for k = 0 .. round(record / period) - 1; the
    sequence ends one period after the last pulse start. ``field_schedule``
    lists (switch time, B_z) pairs, the first at t = 0.
    """
    if not (0 < pulse_s < period_s):
        raise ValueError(f"Probe pulse ({pulse_s} s) must be shorter than its period ({period_s} s)")
    n_pulses = max(1, int(round(record_s / period_s)))
    end = n_pulses * period_s
    eps = 1e-9 * period_s
    schedule = sorted(field_schedule)

    def field_at(t: float) -> float:
        b = schedule[0][1]
        for t_switch, value in schedule:
            if t_switch <= t + eps:
                b = value
        return b

    edges = {0.0, end}
    for k in range(n_pulses):
        edges.add(k * period_s)
        edges.add(k * period_s + pulse_s)
    for t_switch, _ in schedule:
        if eps < t_switch < end - eps:
            edges.add(t_switch)
    ordered: list[float] = []
    for t in sorted(edges):
        if not ordered or t - ordered[-1] > eps:
            ordered.append(t)

    segments = []
    for start, stop in zip(ordered[:-1], ordered[1:]):
        k = math.floor((start + eps) / period_s)
        offset = start - k * period_s
        probe = probe_at(field_at(start))
        in_pulse = offset < pulse_s - eps
        segments.append(Segment(
            duration=stop - start,
            fields=probe if in_pulse else probe.dark(),
            probe=probe if abs(offset) <= eps else None,
        ))
    return PulseSequence(tuple(segments))


def oscillation_frequency_prediction(b_z: float, scheme: LevelScheme) -> tuple[float, float]:
    """Delta m = 2 beat frequency 2 g_F mu_B B / hbar of ground F=2 and its double (rad/s)."""
    check_field(b_z)
    fundamental = abs(2 * scheme.g_factors[("5S1/2", 2)] * MU_B_OVER_HBAR * b_z)
    return fundamental, 2 * fundamental


def antiphase_delay(delay_s: float, b_z: float, scheme: LevelScheme) -> float:
    """Second delay giving a pi-shifted oscillation: delay + pi / omega."""
    fundamental, _ = oscillation_frequency_prediction(b_z, scheme)
    if fundamental == 0:
        raise ValueError("No oscillation at zero field; antiphase delay undefined")
    return delay_s + math.pi / fundamental


def dark_state_weights(rho: DensityMatrix, scheme: LevelScheme | None = None) -> DarkStateWeights:
    f2 = manifold_indices("5S1/2", 2)
    block = np.asarray(rho)[np.ix_(f2, f2)]
    pop = float(np.trace(block).real)
    if not pop > 0:
        raise ValueError("F=2 manifold is empty")
    block = block / pop
    refs = reference_states(scheme)
    lam, m_state, lam_star = (r[f2] for r in (refs.lam, refs.m_state, refs.lam_star))

    def weight(v: np.ndarray) -> float:
        return float(np.real(v.conj() @ block @ v))

    w_lam, w_m = weight(lam), weight(m_state)
    ideal = w_lam * np.outer(lam, lam.conj()) + w_m * np.outer(m_state, m_state.conj())
    return DarkStateWeights(
        lam=w_lam,
        m_state=w_m,
        lam_star=weight(lam_star),
        residual=float(np.linalg.norm(block - ideal)),
        f2_population=pop,
    )


def m_state_only(rho: DensityMatrix) -> DensityMatrix:
    """Replace the F=2 block by its |M> component plus an incoherent remainder.

    The F=1 block and the excited term are kept; hyperfine coherences are
    dropped.
    """
    f2 = manifold_indices("5S1/2", 2)
    m_vec = reference_states().m_state[f2]
    out = np.array(rho, dtype=complex, copy=True)
    block = out[np.ix_(f2, f2)]
    total = float(np.trace(block).real)
    p_m = float(np.real(m_vec.conj() @ block @ m_vec))
    new_block = p_m * np.outer(m_vec, m_vec.conj()) + (total - p_m) / len(f2) * np.eye(len(f2))
    out[np.ix_(range(3), f2)] = 0
    out[np.ix_(f2, range(3))] = 0
    out[np.ix_(f2, f2)] = new_block
    return out


def spectral_amplitude(times: np.ndarray, values: np.ndarray, omega: float) -> float:
    """|2/N sum (y - mean) exp(-i omega t)|, the amplitude of a component at omega."""
    y = np.asarray(values, dtype=float) - float(np.mean(values))
    return float(abs(2.0 / len(y) * np.sum(y * np.exp(-1j * omega * np.asarray(times)))))


def harmonic_ratio(trace: DecayTrace, omega: float) -> float:
    """Amplitude at 2 omega over amplitude at omega."""
    base = spectral_amplitude(trace.times, trace.alpha_raw, omega)
    if base == 0:
        raise ValueError("No component at the fundamental frequency")
    return spectral_amplitude(trace.times, trace.alpha_raw, 2 * omega) / base


def subtract_traces(first: DecayTrace, second: DecayTrace) -> DecayTrace:
    """Pointwise difference first - second.

    Traces on different grids are compared on the overlap, with the second
    resampled by linear interpolation (flagged as ``resampled`` in metadata).

    Raises:
        TraceMismatchError: If the time ranges do not overlap
    """
    metadata = dict(first.metadata)
    metadata["delay_1_s"] = first.metadata.get("delay_s", "nan")
    metadata["delay_2_s"] = second.metadata.get("delay_s", "nan")
    metadata.pop("delay_s", None)
    if first.protocol:
        metadata["protocol"] = f"{first.protocol.split('-')[0]}-subtracted"
    metadata["fit_model"] = "decaying_sinusoid"
    delays = [float(metadata["delay_1_s"]), float(metadata["delay_2_s"])]
    if all(math.isfinite(d) for d in delays):
        metadata["fit_start_s"] = repr(max(delays))

    same_grid = len(first) == len(second) and np.allclose(first.times, second.times, rtol=0, atol=1e-12)
    if same_grid:
        return DecayTrace(
            first.times.copy(),
            first.alpha_raw - second.alpha_raw,
            first.alpha_norm - second.alpha_norm,
            metadata,
        )

    if len(first) == 0 or len(second) == 0:
        raise TraceMismatchError("Cannot subtract an empty trace")
    lo = max(first.times[0], second.times[0])
    hi = min(first.times[-1], second.times[-1])
    keep = (first.times >= lo) & (first.times <= hi)
    if hi < lo or not keep.any():
        raise TraceMismatchError(
            f"Traces do not overlap: [{first.times[0]:g}, {first.times[-1]:g}] s and "
            f"[{second.times[0]:g}, {second.times[-1]:g}] s"
        )
    t = first.times[keep]
    metadata["resampled"] = "true"
    return DecayTrace(
        t,
        first.alpha_raw[keep] - np.interp(t, second.times, second.alpha_raw),
        first.alpha_norm[keep] - np.interp(t, second.times, second.alpha_norm),
        metadata,
    )


class ProtocolEngine:
    """Runs one protocol at one density point and one atomic velocity.

    Example:
        engine = ProtocolEngine(spec, density_cm3=3.8e11)
        rho_ss = engine.run_pump_to_steady_state()
        trace = engine.run_ramsey_zeeman(rho_ss, delay=1e-4)
    """

    def __init__(
        self,
        spec: ExperimentSpec,
        numerics: NumericsSpec | None = None,
        *,
        density_cm3: float,
        temperature_k: float | None = None,
        scheme: LevelScheme | None = None,
        velocity: float = 0.0,
        cache: ExponentialCache | None = None,
    ):
        self.spec = spec
        self.numerics = numerics or NumericsSpec()
        self.scheme = scheme or build_level_scheme()
        self.density_cm3 = density_cm3
        self.temperature_k = temperature_k or spec.cell.temperature_k or temperature_from_density(density_cm3)
        self.velocity = velocity
        self.cache = cache or get_exponential_cache()
        self.relax = RelaxationConfig(
            gamma0=spec.relaxation.gamma0_per_s,
            gamma_p=pressure_broadening(
                spec.cell.buffer_pressure_torr, spec.relaxation.pressure_broadening_hz_per_torr
            ),
        )
        se = spec.spin_exchange
        self.se_config = SpinExchangeConfig(
            cross_section_cm2=se.cross_section_cm2,
            density_cm3=density_cm3,
            temperature_k=self.temperature_k,
            refresh_s=se.refresh_s,
            tolerance=se.tolerance,
            max_iterations=se.max_iterations,
            iterate_segments=se.iterate_segments,
        )
        self.exchange_rate = se_rate(self.se_config)
        self.probe_settings = ProbeSettings(
            weakness_ratio=self.numerics.probe_weakness_ratio,
            back_action_limit=self.numerics.back_action_limit,
            settle_lifetimes=self.numerics.settle_lifetimes,
        )
        if abs(spec.ramsey.residual_field_gauss) > MAX_RESIDUAL_FIELD_GAUSS:
            raise ValueError(
                f"Residual field {spec.ramsey.residual_field_gauss:g} G exceeds "
                f"{MAX_RESIDUAL_FIELD_GAUSS:g} G"
            )
        self._alpha_ss: dict[float, float] = {}

    # Fields

    def laser(self, laser: LaserSpec, b_z: float) -> FieldConfig:
        component = LaserComponent(
            transition=laser.transition,
            polarization=laser.polarization,
            rabi=rabi_from_power(laser.power_mw, 2 * math.pi * self.numerics.rabi_at_1mw_hz),
            detuning=2 * math.pi * laser.detuning_hz,
        )
        return FieldConfig((component,), b_z, self.velocity)

    def pump_fields(self) -> FieldConfig:
        return self.laser(self.spec.pump, 0.0)

    def probe_fields(self, b_z: float = 0.0) -> FieldConfig:
        return self.laser(self.spec.probe, b_z)

    def dynamics(self, fields: FieldConfig) -> Liouvillian:
        return build_dynamics(self.scheme, fields, self.relax)

    # Observables

    def absorption(self, rho: DensityMatrix, probe: FieldConfig | None = None) -> float:
        return absorption_coefficient(
            rho, probe or self.probe_fields(), self.scheme, self.relax,
            settings=self.probe_settings, cache=self.cache,
        )

    def alpha_ss(self, b_z: float = 0.0) -> float:
        """Absorption of the thermal state."""
        if b_z not in self._alpha_ss:
            self._alpha_ss[b_z] = self.absorption(thermal_state(self.scheme), self.probe_fields(b_z))
        return self._alpha_ss[b_z]

    def expected_rate(self) -> float:
        """Rate of the dominant decay the record has to cover (s^-1)."""
        if self.spec.protocol == "B":
            return max(self.relax.gamma0, 1e-3)
        return max(self.exchange_rate + self.relax.gamma0, 1e-3)

    def record_length(self) -> float:
        if self.spec.record_s is not None:
            return self.spec.record_s
        return self.numerics.record_decay_constants / self.expected_rate()

    def probe_timing(self, record_s: float) -> tuple[float, float]:
        """(period, pulse) of the probe train for a record of ``record_s``.

        Protocol C keeps its configured train. For A and B the period is cut
        so the record and the hyperfine decay each get ``min_record_samples``
        samples; the pulse shrinks with it to keep the duty cycle.
        """
        if self.spec.protocol == "C":
            return self.spec.probe_period_s, self.spec.probe_length_s
        fast = max(self.exchange_rate + self.relax.gamma0, 1e-3)
        samples = self.numerics.min_record_samples
        period = min(
            self.spec.probe_period_s,
            record_s / samples,
            self.numerics.record_decay_constants / (fast * samples),
        )
        return period, period * self.spec.probe_duty_cycle

    # Evolution

    def evolve(self, rho: DensityMatrix, fields: FieldConfig, duration: float) -> DensityMatrix:
        dynamics = self.dynamics(fields)
        if self.exchange_rate > 0:
            return self_consistent_evolve(rho, dynamics, self.se_config, duration, cache=self.cache).final
        return propagate(rho, dynamics, duration, cache=self.cache)

    def _with_exchange(self, dynamics: Liouvillian, rho: DensityMatrix) -> Liouvillian:
        if self.exchange_rate == 0:
            return dynamics
        return dynamics + collision_liouvillian(mean_field_from(rho), self.se_config)

    def steady_state_residual(self, rho: DensityMatrix, dynamics: Liouvillian) -> float:
        """max |d rho / dt| with the partner taken from rho itself (s^-1)."""
        total = self._with_exchange(dynamics, rho)
        return float(np.max(np.abs(total.matrix @ vec(rho))))

    def run_pump_to_steady_state(self) -> DensityMatrix:
        """Pump from the thermal state until d rho / dt is below tolerance.

        Chunks start at ``pump_initial_step_s`` and double, capped by the
        remaining pump duration; the spin-exchange partner is frozen per
        chunk, so successive long chunks iterate it to a fixed point.

        Raises:
            SteadyStateError: If the residual is still above tolerance when the pump ends
        """
        logger = get_logger()
        rho = thermal_state(self.scheme)
        fields = self.pump_fields()
        if fields.is_dark:
            return rho

        dynamics = self.dynamics(fields)
        tolerance = self.numerics.steady_state_tol * self.scheme.gamma
        duration = self.spec.pump_duration_s
        step = self.numerics.pump_initial_step_s
        elapsed = 0.0
        while True:
            residual = self.steady_state_residual(rho, dynamics)
            if residual < tolerance:
                logger.debug(f"Pump steady state after {elapsed:.3g} s (residual {residual:.2e} s^-1)")
                return rho
            if elapsed >= duration * (1 - 1e-12):
                raise SteadyStateError(
                    f"Pump did not reach steady state in {duration:g} s "
                    f"(residual {residual:.3e} s^-1, tolerance {tolerance:.3e} s^-1)"
                )
            dt = min(step, duration - elapsed)
            rho = propagate(rho, self._with_exchange(dynamics, rho), dt, cache=None)
            elapsed += dt
            step *= 2

    def execute_sequence(self, rho: DensityMatrix, sequence: PulseSequence) -> SequenceResult:
        """Run the segments in order, sampling absorption where requested.

        Besides the per-pulse limit, the summed back-action is bounded: over
        the record it must stay below ``cumulative_back_action_limit`` times
        the initial deviation from thermal, per decay constant recorded.

        Raises:
            ProbeBackActionError: If a pulse, or the summed train, moves populations too much
            PositivityError: If a sampled state violates the density-matrix invariants
        """
        times: list[float] = []
        alphas: list[float] = []
        pops: list[np.ndarray] = []
        worst = 0.0
        total = 0.0
        t = 0.0
        limit = self.probe_settings.back_action_limit
        thermal_pops = np.real(np.diag(thermal_state(self.scheme)))[:NUM_GROUND]
        deviation = float(np.max(np.abs(np.real(np.diag(rho))[:NUM_GROUND] - thermal_pops)))
        for segment in sequence.segments:
            if segment.probe is not None:
                problems = density_matrix_violations(rho)
                if problems:
                    raise PositivityError(f"Invalid state at t={t:.6g} s: {', '.join(problems)}")
                try:
                    back = check_back_action(
                        rho, segment.probe, segment.duration, self.scheme, self.relax, limit,
                        cache=self.cache,
                    )
                except ProbeBackActionError as e:
                    raise ProbeBackActionError(f"At t={t:.6g} s: {e}") from e
                worst = max(worst, back)
                total += back
                times.append(t)
                alphas.append(self.absorption(rho, segment.probe))
                pops.append(np.real(np.diag(rho))[:NUM_GROUND].copy())
            rho = self.evolve(rho, segment.fields, segment.duration)
            t += segment.duration

        cumulative = 0.0
        if deviation > 1e-12 and t > 0:
            cumulative = total / (deviation * t * self.expected_rate())
            cap = self.numerics.cumulative_back_action_limit
            if cumulative > cap:
                raise ProbeBackActionError(
                    f"Probe train moved ground populations by {total:.3e} in total over {t:.4g} s, "
                    f"{cumulative:.2%} of the initial deviation per decay constant (limit {cap:.2%})"
                )
        return SequenceResult(
            times=np.array(times),
            alpha=np.array(alphas),
            populations=np.array(pops).reshape(len(pops), NUM_GROUND),
            final=rho,
            max_back_action=worst,
            cumulative_back_action=cumulative,
        )

    def _trace(
        self, result: SequenceResult, *, b_z: float, delay: float | None, period: float
    ) -> DecayTrace:
        alpha_ss = self.alpha_ss()
        alpha_ini = float(result.alpha[0])
        metadata = {
            "protocol": self.spec.protocol,
            "density_cm3": repr(float(self.density_cm3)),
            "temperature_k": repr(float(self.temperature_k)),
            "b_z_gauss": repr(float(b_z)),
            "alpha_ss": repr(alpha_ss),
            "alpha_ini": repr(alpha_ini),
            "probe_period_s": repr(float(period)),
            "gamma0_per_s": repr(self.relax.gamma0),
            "cross_section_cm2": repr(self.se_config.cross_section_cm2),
            "max_back_action": repr(result.max_back_action),
            "cumulative_back_action": repr(result.cumulative_back_action),
            "doppler_groups": str(self.numerics.doppler_groups),
        }
        if delay is not None:
            metadata["delay_s"] = repr(float(delay))
        if self.spec.protocol in PROTOCOL_MODELS:
            metadata["fit_model"] = PROTOCOL_MODELS[self.spec.protocol]
        elif b_z == 0:
            metadata["fit_model"] = "exponential"
        return DecayTrace(
            result.times,
            result.alpha,
            normalize_trace(result.alpha, alpha_ss, alpha_ini),
            metadata,
            result.populations,
        )

    def run_relaxation_in_dark(self, rho0: DensityMatrix, record_s: float | None = None) -> DecayTrace:
        """Dark relaxation with stroboscopic probing, no magnetic field."""
        record = record_s or self.record_length()
        period, pulse = self.probe_timing(record)
        sequence = build_probe_train(record, period, pulse, self.probe_fields)
        return self._trace(self.execute_sequence(rho0, sequence), b_z=0.0, delay=None, period=period)

    def run_ramsey_zeeman(
        self,
        rho0: DensityMatrix,
        delay: float,
        b_z: float | None = None,
        record_s: float | None = None,
    ) -> DecayTrace:
        """Residual field for ``delay``, then B_z on; probed stroboscopically."""
        if delay < 0:
            raise ValueError(f"Delay must be >= 0, got {delay}")
        field_on = self.spec.ramsey.b_field_gauss if b_z is None else b_z
        check_field(field_on)
        residual = self.spec.ramsey.residual_field_gauss
        schedule = [(0.0, residual), (delay, field_on)] if delay > 0 else [(0.0, field_on)]
        record = record_s or self.record_length()
        period, pulse = self.probe_timing(record)
        sequence = build_probe_train(record, period, pulse, self.probe_fields, schedule)
        return self._trace(
            self.execute_sequence(rho0, sequence), b_z=field_on, delay=delay, period=period
        )

    def m_state_contribution(
        self,
        rho_ss: DensityMatrix,
        delays: tuple[float, float] | None = None,
        b_z: float | None = None,
    ) -> float:
        """Fundamental amplitude of the subtracted signal from |M> alone over the total."""
        field_on = self.spec.ramsey.b_field_gauss if b_z is None else b_z
        d1, d2 = delays or (
            self.spec.ramsey.delay_s,
            antiphase_delay(self.spec.ramsey.delay_s, field_on, self.scheme),
        )
        omega, _ = oscillation_frequency_prediction(field_on, self.scheme)

        def subtracted(rho: DensityMatrix) -> DecayTrace:
            pair = subtract_traces(
                self.run_ramsey_zeeman(rho, d1, field_on), self.run_ramsey_zeeman(rho, d2, field_on)
            )
            return pair.window(max(d1, d2))

        full = subtracted(rho_ss)
        part = subtracted(m_state_only(rho_ss))
        total = spectral_amplitude(full.times, full.alpha_raw, omega)
        if total == 0:
            raise ValueError("Subtracted signal has no component at the predicted frequency")
        return spectral_amplitude(part.times, part.alpha_raw, omega) / total


def make_engine(
    spec: ExperimentSpec,
    numerics: NumericsSpec | None = None,
    *,
    density_cm3: float,
    temperature_k: float | None = None,
    constants_file: str | None = None,
    velocity: float = 0.0,
) -> ProtocolEngine:
    scheme = build_level_scheme(load_constants(constants_file))
    return ProtocolEngine(
        spec, numerics, density_cm3=density_cm3, temperature_k=temperature_k,
        scheme=scheme, velocity=velocity,
    )


def run_protocol(
    spec: ExperimentSpec,
    numerics: NumericsSpec | None = None,
    *,
    density_cm3: float,
    temperature_k: float | None = None,
    b_field_gauss: float | None = None,
    delays: Sequence[float] | None = None,
    constants_file: str | None = None,
) -> ProtocolRun:
    """Pump, then record the protocol's traces, averaged over velocity groups.

    Trace keys: "dark" for A and B; "zero_field", "delay_1", "delay_2" and
    "subtracted" for C.
    """
    numerics = numerics or NumericsSpec()
    logger = get_logger()
    base = make_engine(
        spec, numerics, density_cm3=density_cm3, temperature_k=temperature_k,
        constants_file=constants_file,
    )
    scheme = base.scheme
    temperature = base.temperature_k
    b_field = spec.ramsey.b_field_gauss if b_field_gauss is None else b_field_gauss
    if spec.protocol == "C":
        if delays:
            d1, d2 = float(delays[0]), float(delays[1] if len(delays) > 1 else delays[0])
        else:
            d1 = spec.ramsey.delay_s
            d2 = antiphase_delay(d1, b_field, scheme)

    velocities, weights = doppler_nodes(temperature, numerics.doppler_groups, scheme.constants.mass_kg)
    by_velocity: dict[float, dict[str, DecayTrace]] = {}
    rho_ss = np.zeros_like(thermal_state(scheme))
    for v, w in zip(velocities, weights):
        engine = base if numerics.doppler_groups == 1 else ProtocolEngine(
            spec, numerics, density_cm3=density_cm3, temperature_k=temperature,
            scheme=scheme, velocity=float(v),
        )
        logger.debug(f"Protocol {spec.protocol}: n={density_cm3:.3e} cm^-3, v={v:.1f} m/s")
        rho_v = engine.run_pump_to_steady_state()
        rho_ss = rho_ss + w * rho_v
        record = engine.record_length()
        if spec.protocol == "C":
            traces = {
                "zero_field": engine.run_ramsey_zeeman(rho_v, d1, 0.0, record),
                "delay_1": engine.run_ramsey_zeeman(rho_v, d1, b_field, record),
                "delay_2": engine.run_ramsey_zeeman(rho_v, d2, b_field, record),
            }
        else:
            traces = {"dark": engine.run_relaxation_in_dark(rho_v, record)}
        by_velocity[float(v)] = traces

    averaged = {
        key: doppler_average(
            lambda v, key=key: by_velocity[v][key],
            temperature, numerics.doppler_groups, scheme.constants.mass_kg,
        )
        for key in next(iter(by_velocity.values()))
    }
    if spec.protocol == "C":
        averaged["subtracted"] = subtract_traces(averaged["delay_1"], averaged["delay_2"])

    return ProtocolRun(
        protocol=spec.protocol,
        density_cm3=density_cm3,
        temperature_k=temperature,
        b_field_gauss=b_field if spec.protocol == "C" else 0.0,
        steady_state=rho_ss,
        traces=averaged,
    )



__all__ = [
    "MAX_RESIDUAL_FIELD_GAUSS",
    "PROTOCOL_MODELS",
    "SteadyStateError",
    "ProbeBackActionError",
    "TraceMismatchError",
    "Segment",
    "PulseSequence",
    "SequenceResult",
    "DarkStateWeights",
    "ProtocolRun",
    "ProtocolEngine",
    "build_probe_train",
    "oscillation_frequency_prediction",
    "antiphase_delay",
    "dark_state_weights",
    "m_state_only",
    "spectral_amplitude",
    "harmonic_ratio",
    "subtract_traces",
    "make_engine",
    "run_protocol",
]
