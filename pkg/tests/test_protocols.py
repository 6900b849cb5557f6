"""Tests for pulse sequences, dark-state diagnostics and the protocol engine."""

import dataclasses
import math

import numpy as np
import pytest

from src.analysis.fitting import FitInputError
from src.commands.common import protocol_runner
from src.physics.atomic_structure import manifold_indices, reference_states, thermal_state
from src.physics.liouville import FieldConfig, LaserComponent, density_matrix_violations
from src.physics.protocols import (
    ProbeBackActionError,
    ProtocolEngine,
    SteadyStateError,
    TraceMismatchError,
    antiphase_delay,
    build_probe_train,
    dark_state_weights,
    harmonic_ratio,
    m_state_only,
    make_engine,
    oscillation_frequency_prediction,
    spectral_amplitude,
    subtract_traces,
)
from src.physics.spin_exchange import ZEEMAN_COHERENCE_FRACTION, extract_cross_section, se_rate
from src.types import DecayTrace, NumericsSpec, RamseySpec
from src.utils.config import default_experiment, experiment_for_protocol, load_run_config


def probe_at(b_z: float) -> FieldConfig:
    return FieldConfig((LaserComponent((1, 2), "linear", 1e3),), b_z)


def projector(v: np.ndarray) -> np.ndarray:
    return np.outer(v, v.conj())


class TestProbeTrain:
    """Stroboscopic probe sequences."""

    def test_pulses_and_dark_gaps(self):
        seq = build_probe_train(1e-3, 1e-4, 5e-6, probe_at)
        assert len(seq.segments) == 20
        np.testing.assert_allclose(seq.sample_times(), np.arange(10) * 1e-4, atol=1e-15)
        assert seq.total_duration == pytest.approx(1e-3)
        pulse, gap = seq.segments[0], seq.segments[1]
        assert pulse.sample and not pulse.fields.is_dark and pulse.duration == pytest.approx(5e-6)
        assert not gap.sample and gap.fields.is_dark and gap.duration == pytest.approx(9.5e-5)

    def test_field_switch_splits_a_gap(self):
        seq = build_probe_train(1e-3, 1e-4, 5e-6, probe_at, [(0.0, 0.0), (2.5e-4, 1e-3)])
        assert len(seq.segments) == 21
        t = 0.0
        for segment in seq.segments:
            expected = 1e-3 if t >= 2.5e-4 - 1e-12 else 0.0
            assert segment.fields.b_z == expected
            t += segment.duration

    def test_pulse_longer_than_period(self):
        with pytest.raises(ValueError):
            build_probe_train(1e-3, 1e-4, 1e-4, probe_at)


class TestZeemanPredictions:
    """Beat frequency and antiphase delay."""

    def test_frequency_at_one_milligauss(self, scheme):
        omega, second = oscillation_frequency_prediction(1e-3, scheme)
        assert omega / (2 * math.pi) == pytest.approx(1.4e3, rel=0.01)
        assert second == pytest.approx(2 * omega)

    def test_antiphase_delay(self, scheme):
        omega, _ = oscillation_frequency_prediction(1e-3, scheme)
        assert antiphase_delay(1e-4, 1e-3, scheme) == pytest.approx(1e-4 + math.pi / omega)

    def test_no_antiphase_at_zero_field(self, scheme):
        with pytest.raises(ValueError):
            antiphase_delay(1e-4, 0.0, scheme)


class TestDarkStates:
    """Reference-state weights and the |M>-only state."""

    def test_pure_lambda(self, scheme):
        w = dark_state_weights(projector(reference_states().lam), scheme)
        assert w.lam == pytest.approx(1.0)
        assert w.m_state == pytest.approx(0.0, abs=1e-12)
        assert w.lam_star == pytest.approx(0.0, abs=1e-12)
        assert w.residual == pytest.approx(0.0, abs=1e-12)
        assert w.f2_population == pytest.approx(1.0)

    def test_mixture_is_normalized_to_f2(self, scheme):
        refs = reference_states()
        rho = 0.3 * projector(refs.lam) + 0.2 * projector(refs.m_state)
        rho[0, 0] = 0.5
        w = dark_state_weights(rho, scheme)
        assert w.f2_population == pytest.approx(0.5)
        assert (w.lam, w.m_state) == (pytest.approx(0.6), pytest.approx(0.4))
        assert w.residual == pytest.approx(0.0, abs=1e-12)

    def test_bright_state_leaves_residual(self, scheme):
        w = dark_state_weights(projector(reference_states().lam_star), scheme)
        assert w.lam_star == pytest.approx(1.0)
        assert w.residual == pytest.approx(1.0)

    def test_empty_f2_rejected(self, scheme):
        with pytest.raises(ValueError):
            dark_state_weights(np.diag([1.0] + [0.0] * 15).astype(complex), scheme)

    def test_m_state_only(self):
        refs = reference_states()
        rho = 0.25 * projector(refs.lam) + 0.25 * projector(refs.m_state)
        rho[1, 1] = 0.5
        rho[1, 5] = rho[5, 1] = 0.01
        out = m_state_only(rho)
        f2 = manifold_indices("5S1/2", 2)
        m_vec = refs.m_state[f2]
        expected = 0.25 * projector(m_vec) + 0.05 * np.eye(5)
        np.testing.assert_allclose(out[np.ix_(f2, f2)], expected, atol=1e-12)
        assert out[1, 1] == 0.5
        assert out[1, 5] == 0
        assert np.trace(out).real == pytest.approx(1.0)
        assert density_matrix_violations(out) == []


class TestSpectral:
    """Spectral amplitudes and trace subtraction."""

    OMEGA = 2 * math.pi * 1400.0

    def grid(self):
        # Whole number of periods
        return np.linspace(0.0, 10 / 1400.0, 1000, endpoint=False)

    def test_spectral_amplitude(self):
        t = self.grid()
        assert spectral_amplitude(t, 0.3 * np.sin(self.OMEGA * t) + 1.0, self.OMEGA) == pytest.approx(0.3)

    def test_harmonic_ratio(self):
        t = self.grid()
        y = np.sin(self.OMEGA * t) + 0.2 * np.sin(2 * self.OMEGA * t)
        assert harmonic_ratio(DecayTrace(t, y, y), self.OMEGA) == pytest.approx(0.2, rel=1e-9)

    def test_subtract_on_same_grid(self, trace_factory):
        t = np.linspace(0, 1e-2, 50)
        first = trace_factory(t, np.sin(self.OMEGA * t), protocol="C", delay_s=1e-4)
        second = trace_factory(t, -np.sin(self.OMEGA * t), protocol="C", delay_s=4.6e-4)
        diff = subtract_traces(first, second)
        np.testing.assert_allclose(diff.alpha_norm, 2 * np.sin(self.OMEGA * t))
        assert diff.metadata["protocol"] == "C-subtracted"
        assert diff.metadata["fit_model"] == "decaying_sinusoid"
        assert float(diff.metadata["fit_start_s"]) == 4.6e-4
        assert "delay_s" not in diff.metadata
        assert "resampled" not in diff.metadata

    def test_subtract_resamples_the_overlap(self, trace_factory):
        first = trace_factory(np.linspace(0, 1.0, 11), np.linspace(0, 1.0, 11))
        second = trace_factory(np.linspace(0.25, 2.0, 8), np.zeros(8))
        diff = subtract_traces(first, second)
        np.testing.assert_allclose(diff.times, [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
        assert diff.metadata["resampled"] == "true"

    def test_subtract_without_overlap(self, trace_factory):
        first = trace_factory(np.linspace(0, 1.0, 5), np.zeros(5))
        second = trace_factory(np.linspace(2.0, 3.0, 5), np.zeros(5))
        with pytest.raises(TraceMismatchError):
            subtract_traces(first, second)


class TestProtocolEngine:
    """Engine set-up and the short paths through it."""

    def test_rates_and_record(self):
        spec = default_experiment("A")
        engine = ProtocolEngine(spec, density_cm3=3e11, temperature_k=330.0)
        assert engine.exchange_rate == pytest.approx(se_rate(engine.se_config))
        assert engine.expected_rate() == pytest.approx(engine.exchange_rate + 50.0)
        assert engine.record_length() == pytest.approx(6.0 / engine.expected_rate())

    def test_protocol_b_records_for_slow_rate(self):
        engine = ProtocolEngine(default_experiment("B"), density_cm3=3e11, temperature_k=330.0)
        assert engine.expected_rate() == 50.0

    @pytest.mark.parametrize("protocol", ["A", "B"])
    @pytest.mark.parametrize("density", [1e11, 3.8e11, 9e11])
    def test_records_get_enough_samples(self, protocol, density):
        spec = default_experiment(protocol)
        engine = ProtocolEngine(spec, density_cm3=density)
        record = engine.record_length()
        period, pulse = engine.probe_timing(record)
        assert period <= spec.probe_period_s
        assert pulse / period == pytest.approx(spec.probe_duty_cycle)
        assert record / period >= 64 - 1e-9
        # The hyperfine decay itself is resolved, not only the record
        hyperfine = 6.0 / (engine.exchange_rate + 50.0)
        assert hyperfine / period >= 64 - 1e-9
        assert len(build_probe_train(record, period, pulse, engine.probe_fields).sample_times()) >= 64

    def test_protocol_c_keeps_its_train(self):
        spec = default_experiment("C")
        engine = ProtocolEngine(spec, density_cm3=3.8e11)
        assert engine.probe_timing(0.01) == (spec.probe_period_s, spec.probe_length_s)

    def test_thermal_absorption(self):
        engine = ProtocolEngine(default_experiment("A"), density_cm3=3e11, temperature_k=330.0)
        assert engine.alpha_ss() == pytest.approx(5 / 48, rel=1e-2)

    def test_residual_field_limit(self):
        spec = dataclasses.replace(default_experiment("C"), ramsey=RamseySpec(residual_field_gauss=1e-4))
        with pytest.raises(ValueError, match="Residual field"):
            ProtocolEngine(spec, density_cm3=3e11, temperature_k=330.0)

    def test_dark_pump_returns_thermal_state(self):
        spec = default_experiment("A")
        spec = dataclasses.replace(spec, pump=dataclasses.replace(spec.pump, power_mw=0.0))
        engine = ProtocolEngine(spec, density_cm3=3e11, temperature_k=330.0)
        np.testing.assert_array_equal(engine.run_pump_to_steady_state(), thermal_state())

    def test_pump_too_short(self):
        spec = dataclasses.replace(default_experiment("A"), pump_duration_s=1e-4)
        engine = ProtocolEngine(spec, density_cm3=3e11, temperature_k=330.0)
        with pytest.raises(SteadyStateError):
            engine.run_pump_to_steady_state()

    def test_back_action_limit(self):
        engine = ProtocolEngine(
            default_experiment("A"), NumericsSpec(back_action_limit=1e-12),
            density_cm3=3e11, temperature_k=330.0,
        )
        sequence = build_probe_train(2e-3, 1e-3, 5e-5, engine.probe_fields)
        with pytest.raises(ProbeBackActionError):
            engine.execute_sequence(thermal_state(), sequence)

    def test_summed_back_action_limit(self):
        # sigma+ probe at the generic power on a weakly pumped state: every pulse
        # passes, the train as a whole pumps far more than the signal
        spec = default_experiment("B")
        spec = dataclasses.replace(spec, probe=dataclasses.replace(spec.probe, power_mw=0.01))
        engine = ProtocolEngine(spec, density_cm3=3.8e11)
        rho = thermal_state()
        f1 = manifold_indices("5S1/2", 1)
        rho[f1, f1] -= 1e-3
        rho[7, 7] += 3e-3
        sequence = build_probe_train(0.02, 2.5e-4, 1.25e-5, engine.probe_fields)
        with pytest.raises(ProbeBackActionError, match="in total"):
            engine.execute_sequence(rho, sequence)

        loose = ProtocolEngine(
            spec, NumericsSpec(cumulative_back_action_limit=1e6), density_cm3=3.8e11
        )
        result = loose.execute_sequence(rho, sequence)
        assert 0.05 < result.cumulative_back_action < 1e6
        assert result.max_back_action < 0.005

    def test_weak_probe_passes_summed_limit(self):
        engine = ProtocolEngine(default_experiment("B"), density_cm3=3.8e11)
        rho = thermal_state()
        f1 = manifold_indices("5S1/2", 1)
        rho[f1, f1] -= 1e-3
        rho[7, 7] += 3e-3
        sequence = build_probe_train(0.02, 2.5e-4, 1.25e-5, engine.probe_fields)
        result = engine.execute_sequence(rho, sequence)
        assert result.cumulative_back_action < 0.01
        assert len(result.times) == 80

    def test_thermal_state_has_no_contrast(self):
        engine = ProtocolEngine(default_experiment("A"), density_cm3=3e11, temperature_k=330.0)
        with pytest.raises(FitInputError, match="Cannot normalize"):
            engine.run_relaxation_in_dark(thermal_state(), record_s=3e-3)


@pytest.fixture(scope="module")
def shipped():
    return load_run_config("paper_defaults")


@pytest.fixture(scope="module")
def runs(shipped):
    """Protocol runs at the shipped settings, each computed once per module."""
    return protocol_runner(shipped)


def engine_for(config, protocol: str, density: float, temperature_k: float) -> ProtocolEngine:
    return make_engine(
        experiment_for_protocol(config.experiment, protocol), config.numerics,
        density_cm3=density, temperature_k=temperature_k, constants_file=config.constants_file,
    )


@pytest.mark.slow
class TestFullRuns:
    """Pump, record and fit at the shipped settings."""

    DENSITY = 3.8e11

    def test_hyperfine_decay(self, shipped, runs):
        result = runs("A", self.DENSITY)
        trace = result.run.traces["dark"]
        assert trace.alpha_norm[0] == pytest.approx(1.0)
        assert trace.metadata["protocol"] == "A"
        assert density_matrix_violations(result.run.steady_state) == []

        engine = engine_for(shipped, "A", self.DENSITY, result.run.temperature_k)
        fit = result.fit
        assert fit.converged, fit.message
        assert fit.rms_residual < 0.02
        assert fit.param("gamma") == pytest.approx(engine.exchange_rate + engine.relax.gamma0, rel=0.05)

    def test_cross_section_round_trip(self, shipped, runs):
        results = [runs("A", n) for n in shipped.sweep.densities_cm3]
        assert all(r.fit.converged and r.fit.rms_residual < 0.02 for r in results)
        xs = extract_cross_section(
            [(r.point.density_cm3, r.fit.param("gamma")) for r in results],
            [r.run.temperature_k for r in results],
        )
        assert xs.r_squared > 0.99
        assert xs.sigma_cm2 == pytest.approx(shipped.experiment.spin_exchange.cross_section_cm2, rel=0.05)

    def test_two_rate_decay(self, shipped, runs):
        hyperfine, two_rate = runs("A", self.DENSITY), runs("B", self.DENSITY)
        fit = two_rate.fit
        assert fit.converged, fit.message
        assert fit.param("A1") * fit.param("A2") < 0
        assert fit.param("gamma1") == pytest.approx(hyperfine.fit.param("gamma"), rel=0.10)
        assert fit.param("gamma2") == pytest.approx(shipped.experiment.relaxation.gamma0_per_s, rel=0.10)
        # Overshoot: absorption passes below its steady-state value before returning
        assert two_rate.run.traces["dark"].alpha_norm.min() < 0

    def test_ramsey_oscillation(self, shipped, runs, scheme):
        b_field = shipped.experiment.ramsey.b_field_gauss
        result = runs("C", self.DENSITY, b_field)
        assert set(result.run.traces) == {"zero_field", "delay_1", "delay_2", "subtracted"}
        assert result.run.traces["subtracted"].metadata["fit_model"] == "decaying_sinusoid"

        omega, _ = oscillation_frequency_prediction(b_field, scheme)
        fit = result.fit
        assert fit.converged, fit.message
        assert fit.param("omega") == pytest.approx(omega, rel=0.01)
        assert fit.rms_residual < 0.03 * fit.param("A")

    def test_zeeman_rate_follows_exchange_fraction(self, shipped, runs):
        """gamma12 - gamma0 is 9/16 of the hyperfine exchange rate."""
        gamma0 = shipped.experiment.relaxation.gamma0_per_s
        gamma_hf = runs("A", self.DENSITY).fit.param("gamma")
        gamma12 = runs("C", self.DENSITY, shipped.experiment.ramsey.b_field_gauss).fit.param("gamma")
        fraction = (gamma12 - gamma0) / (gamma_hf - gamma0)
        assert fraction == pytest.approx(ZEEMAN_COHERENCE_FRACTION, rel=0.15)

    def test_coherence_times(self, shipped, runs):
        b_field = shipped.experiment.ramsey.b_field_gauss
        for density in (1e11, 9e11):
            fit = runs("C", density, b_field).fit
            assert fit.converged, fit.message
            assert 1e-3 < 1 / fit.param("gamma") < 12e-3

    def test_zeeman_rate_is_field_independent(self, runs):
        rates = []
        for b_field in (5e-4, 1e-3, 2e-3):
            fit = runs("C", self.DENSITY, b_field).fit
            assert fit.converged, fit.message
            rates.append(fit.param("gamma"))
        assert max(rates) / min(rates) < 1.10

    def test_dark_states_after_pump(self, shipped, runs, scheme):
        result = runs("C", self.DENSITY, shipped.experiment.ramsey.b_field_gauss)
        weights = dark_state_weights(result.run.steady_state, scheme)
        assert 0.45 <= weights.lam <= 0.55
        assert 0.45 <= weights.m_state <= 0.55
        assert weights.residual < 0.05

    def test_m_state_share_and_harmonics(self, shipped, runs, scheme):
        b_field = shipped.experiment.ramsey.b_field_gauss
        result = runs("C", self.DENSITY, b_field)
        engine = engine_for(shipped, "C", self.DENSITY, result.run.temperature_k)
        assert 0.3 <= engine.m_state_contribution(result.run.steady_state, b_z=b_field) <= 0.7

        subtracted = result.run.traces["subtracted"]
        window = subtracted.window(float(subtracted.metadata["fit_start_s"]))
        omega, _ = oscillation_frequency_prediction(b_field, scheme)
        assert harmonic_ratio(window, omega) < 0.1
        assert spectral_amplitude(window.times, window.alpha_raw, omega) > 3 * spectral_amplitude(
            window.times, window.alpha_raw, 0.37 * omega
        )

    def test_refresh_halving(self, shipped, runs):
        """Halving the mean-field refresh interval leaves the default record unchanged."""
        result = runs("A", self.DENSITY)
        engine = engine_for(shipped, "A", self.DENSITY, result.run.temperature_k)
        spec = engine.spec
        halved = dataclasses.replace(
            spec,
            spin_exchange=dataclasses.replace(spec.spin_exchange, refresh_s=0.05 / engine.exchange_rate),
        )
        fine = ProtocolEngine(
            halved, shipped.numerics, density_cm3=self.DENSITY, temperature_k=result.run.temperature_k
        )
        rho = result.run.steady_state
        record = 0.01
        coarse_trace = engine.run_relaxation_in_dark(rho, record)
        fine_trace = fine.run_relaxation_in_dark(rho, record)
        assert np.max(np.abs(fine_trace.alpha_norm - coarse_trace.alpha_norm)) < 1e-4
