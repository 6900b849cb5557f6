"""Tests for mean-field spin exchange and the cross-section regression."""

import numpy as np
import pytest
from scipy.linalg import expm

from src.physics.atomic_structure import NUM_GROUND, thermal_state
from src.physics.liouville import (
    FieldConfig,
    RelaxationConfig,
    build_dynamics,
    density_matrix_violations,
    propagate,
    unvec,
    vec,
)
from src.physics.spin_exchange import (
    COLLISIONS_PER_EXCHANGE,
    ZEEMAN_COHERENCE_FRACTION,
    CrossSectionError,
    SpinExchangeConfig,
    SpinExchangeConvergenceError,
    collision_liouvillian,
    extract_cross_section,
    f2_coherence_rates,
    mean_field_from,
    mean_relative_speed,
    se_rate,
    se_superoperator,
    se_superoperator_apply,
    self_consistent_evolve,
    uncoupled_basis_unitary,
)


# Ground F_z and I.S eigenvalues in canonical order
F_Z = np.array([-1.0, 0.0, 1.0, -2.0, -1.0, 0.0, 1.0, 2.0])
I_DOT_S = np.array([-1.25] * 3 + [0.75] * 5)


def random_ground_state(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((NUM_GROUND, NUM_GROUND)) + 1j * rng.standard_normal((NUM_GROUND, NUM_GROUND))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def oriented_state() -> np.ndarray:
    """Diagonal 16x16 state with net <F_z> > 0."""
    rho = np.zeros((16, 16), dtype=complex)
    rho[:NUM_GROUND, :NUM_GROUND] = np.diag([0.05, 0.10, 0.15, 0.02, 0.08, 0.12, 0.18, 0.30])
    return rho


@pytest.fixture
def exchange_config():
    return SpinExchangeConfig(cross_section_cm2=2e-14, density_cm3=5e11, temperature_k=330.0)


class TestRates:
    """Collision rates."""

    def test_mean_relative_speed(self):
        assert mean_relative_speed(330.0) == pytest.approx(4.0098e4, rel=1e-3)

    def test_rate_is_n_sigma_v(self, exchange_config):
        expected = 5e11 * 2e-14 * mean_relative_speed(330.0)
        assert se_rate(exchange_config) == pytest.approx(expected)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SpinExchangeConfig(cross_section_cm2=-1.0, density_cm3=1e11, temperature_k=330.0)
        with pytest.raises(ValueError):
            SpinExchangeConfig(cross_section_cm2=2e-14, density_cm3=1e11, temperature_k=0.0)


class TestCollisionTerm:
    """Singlet-triplet erasure with a frozen partner."""

    def test_uncoupled_basis_is_orthogonal(self):
        u = uncoupled_basis_unitary()
        np.testing.assert_allclose(u.T @ u, np.eye(NUM_GROUND), atol=1e-12)

    def test_trace_preserved(self):
        s = se_superoperator(random_ground_state(1), 1.0)
        assert np.max(np.abs(vec(np.eye(NUM_GROUND)) @ s)) < 1e-12

    def test_thermal_state_is_fixed(self):
        thermal = np.eye(NUM_GROUND, dtype=complex) / NUM_GROUND
        assert np.max(np.abs(se_superoperator(thermal, 1.0) @ vec(thermal))) < 1e-12

    def test_superoperator_matches_direct_evaluation(self):
        rho, mf = random_ground_state(2), random_ground_state(3)
        direct = se_superoperator_apply(rho, mf, 2.5)
        via_matrix = (se_superoperator(mf, 2.5) @ vec(rho)).reshape(NUM_GROUND, NUM_GROUND, order="F")
        np.testing.assert_allclose(via_matrix, direct, atol=1e-12)

    def test_total_fz_conserved_with_itself_as_partner(self):
        rho = oriented_state()[:NUM_GROUND, :NUM_GROUND]
        drift = se_superoperator_apply(rho, rho, 1.0)
        assert abs(np.trace(np.diag(F_Z) @ drift)) < 1e-12

    def test_hyperfine_correlation_decays_at_half_collision_rate(self):
        """With an unpolarized partner <I.S> relaxes at half the collision rate."""
        rho = np.diag([0.0] * 3 + [0.2] * 5).astype(complex)
        thermal = np.eye(NUM_GROUND, dtype=complex) / NUM_GROUND
        drift = se_superoperator_apply(rho, thermal, 1.0)
        assert np.real(np.trace(np.diag(I_DOT_S) @ drift)) == pytest.approx(-0.5 * 0.75, abs=1e-12)

    def test_collision_liouvillian_uses_exchange_rate(self, exchange_config):
        """<I.S> decays at the exchange rate R = n sigma v."""
        rho = np.zeros((16, 16), dtype=complex)
        rho[3:8, 3:8] = np.eye(5) / 5
        L = collision_liouvillian(mean_field_from(thermal_state()), exchange_config)
        drift = unvec(L.matrix @ vec(rho))[:NUM_GROUND, :NUM_GROUND]
        rate = -np.real(np.trace(np.diag(I_DOT_S) @ drift)) / 0.75
        assert COLLISIONS_PER_EXCHANGE == 2.0
        assert rate == pytest.approx(se_rate(exchange_config), rel=1e-10)
        assert L.trace_residual() < 1e-9

    def test_empty_ground_block_has_no_partner(self):
        with pytest.raises(ValueError):
            mean_field_from(np.zeros((16, 16), dtype=complex))

    @pytest.mark.parametrize("index", [3, 7])
    def test_stretched_state_is_fixed(self, index):
        """|2, +-2> with itself as partner is a pure triplet pair."""
        rho = np.zeros((NUM_GROUND, NUM_GROUND), dtype=complex)
        rho[index, index] = 1.0
        assert np.max(np.abs(se_superoperator_apply(rho, rho, 1.0))) < 1e-12

    @pytest.mark.parametrize("seed", [4, 5, 6])
    def test_frozen_partner_step_keeps_positivity(self, seed):
        rho, mf = random_ground_state(seed), random_ground_state(seed + 10)
        step = expm(se_superoperator(mf, 1.0) * 2.0)
        after = (step @ vec(rho)).reshape(NUM_GROUND, NUM_GROUND, order="F")
        assert np.linalg.eigvalsh(0.5 * (after + after.conj().T))[0] > -1e-12
        assert np.trace(after).real == pytest.approx(1.0, abs=1e-12)


class TestZeemanCoherenceModes:
    """F=2 coherence relaxation with an unpolarized partner."""

    def test_delta_m_two(self):
        rates = f2_coherence_rates(np.eye(NUM_GROUND) / NUM_GROUND, 1.0)
        np.testing.assert_allclose(rates, [9 / 16, 0.75, 1.0], atol=1e-10)
        assert rates[0] == pytest.approx(ZEEMAN_COHERENCE_FRACTION)

    def test_delta_m_one(self):
        rates = f2_coherence_rates(np.eye(NUM_GROUND) / NUM_GROUND, 1.0, delta_m=1)
        np.testing.assert_allclose(rates, [7 / 16, 9 / 16, 0.75, 1.0], atol=1e-10)

    def test_scales_with_exchange_rate(self):
        thermal = np.eye(NUM_GROUND) / NUM_GROUND
        np.testing.assert_allclose(
            f2_coherence_rates(thermal, 250.0), 250.0 * f2_coherence_rates(thermal, 1.0), rtol=1e-10
        )

    @pytest.mark.parametrize("delta_m", [0, 5])
    def test_invalid_delta_m(self, delta_m):
        with pytest.raises(ValueError):
            f2_coherence_rates(np.eye(NUM_GROUND) / NUM_GROUND, 1.0, delta_m=delta_m)


class TestSelfConsistentEvolution:
    """Propagation with a refreshed mean-field partner."""

    def test_no_exchange_matches_plain_propagation(self, scheme):
        relax = RelaxationConfig(gamma0=50.0)
        dynamics = build_dynamics(scheme, FieldConfig(), relax)
        cfg = SpinExchangeConfig(cross_section_cm2=2e-14, density_cm3=0.0, temperature_k=330.0)
        trajectory = self_consistent_evolve(oriented_state(), dynamics, cfg, 1e-3)
        expected = propagate(oriented_state(), dynamics, 1e-3, cache=None)
        np.testing.assert_allclose(trajectory.final, expected, atol=1e-12)

    def test_refresh_grid(self, scheme, exchange_config):
        dynamics = build_dynamics(scheme, FieldConfig(), RelaxationConfig(gamma0=50.0))
        trajectory = self_consistent_evolve(oriented_state(), dynamics, exchange_config, 1e-3)
        assert len(trajectory.states) == len(trajectory.times)
        assert trajectory.times[-1] == pytest.approx(1e-3)
        assert np.all(np.diff(trajectory.times) <= 0.1 / se_rate(exchange_config) + 1e-15)
        for state in trajectory.states:
            assert density_matrix_violations(state) == []

    def test_exchange_relaxes_hyperfine_correlation(self, scheme, exchange_config):
        dynamics = build_dynamics(scheme, FieldConfig(), RelaxationConfig(gamma0=0.0))
        rho = np.zeros((16, 16), dtype=complex)
        rho[3:8, 3:8] = np.eye(5) / 5
        trajectory = self_consistent_evolve(rho, dynamics, exchange_config, 1e-3)
        i_dot_s = np.real(np.trace(np.diag(I_DOT_S) @ trajectory.final[:NUM_GROUND, :NUM_GROUND]))
        assert 0.0 < i_dot_s < 0.75

    def test_iteration_converges(self, scheme, exchange_config):
        dynamics = build_dynamics(scheme, FieldConfig(), RelaxationConfig(gamma0=50.0))
        trajectory = self_consistent_evolve(oriented_state(), dynamics, exchange_config, 1e-3, iterate=True)
        assert trajectory.iterations >= 2

    def test_iteration_cap(self, scheme):
        cfg = SpinExchangeConfig(
            cross_section_cm2=2e-14, density_cm3=5e11, temperature_k=330.0,
            tolerance=1e-30, max_iterations=2,
        )
        dynamics = build_dynamics(scheme, FieldConfig(), RelaxationConfig(gamma0=50.0))
        with pytest.raises(SpinExchangeConvergenceError):
            self_consistent_evolve(oriented_state(), dynamics, cfg, 1e-3, iterate=True)

    def test_refresh_has_no_effect_without_orientation(self, scheme, exchange_config):
        """The collision term sees the partner only through <S>, which stays zero here."""
        rho = np.zeros((16, 16), dtype=complex)
        rho[:3, :3] = 0.2 * np.eye(3) / 3
        rho[3:8, 3:8] = 0.8 * np.eye(5) / 5
        dynamics = build_dynamics(scheme, FieldConfig(), RelaxationConfig(gamma0=50.0))
        coarse = self_consistent_evolve(rho, dynamics, exchange_config, 1e-3, refresh_s=2.5e-4)
        fine = self_consistent_evolve(rho, dynamics, exchange_config, 1e-3, refresh_s=1.25e-4)
        np.testing.assert_allclose(fine.final, coarse.final, atol=1e-10)

    def test_refresh_error_is_first_order(self, scheme, exchange_config):
        dynamics = build_dynamics(scheme, FieldConfig(), RelaxationConfig(gamma0=50.0))

        def final(refresh_s: float) -> np.ndarray:
            return self_consistent_evolve(
                oriented_state(), dynamics, exchange_config, 1e-3, refresh_s=refresh_s
            ).final

        reference = final(2.5e-4 / 16)
        error = np.max(np.abs(final(2.5e-4) - reference))
        error_half = np.max(np.abs(final(1.25e-4) - reference))
        assert 0 < error < 1e-2
        assert error_half < 0.6 * error


class TestCrossSection:
    """Rate-versus-density regression."""

    DENSITIES = [1e11, 3e11, 5e11, 7e11, 9e11]

    def test_recovers_synthetic_cross_section(self):
        v = mean_relative_speed(330.0)
        rates = [(n, 2e-14 * n * v + 50.0) for n in self.DENSITIES]
        xs = extract_cross_section(rates, 330.0)
        assert xs.sigma_cm2 == pytest.approx(2e-14, rel=1e-9)
        assert xs.intercept_per_s == pytest.approx(50.0, abs=1e-6)
        assert xs.r_squared == pytest.approx(1.0)

    def test_per_point_temperatures(self):
        temps = [320.0, 330.0, 340.0, 350.0, 360.0]
        rates = [(n, 2e-14 * n * mean_relative_speed(t) + 50.0) for n, t in zip(self.DENSITIES, temps)]
        xs = extract_cross_section(rates, temps)
        assert xs.sigma_cm2 == pytest.approx(2e-14, rel=1e-9)

    def test_weighted_with_uncertainties(self):
        v = mean_relative_speed(330.0)
        rates = [(n, 2e-14 * n * v + 50.0 + (-1) ** i) for i, n in enumerate(self.DENSITIES)]
        xs = extract_cross_section(rates, 330.0, uncertainties=[1.0] * 5)
        assert xs.sigma_cm2 == pytest.approx(2e-14, rel=0.05)
        assert xs.sigma_err_cm2 > 0

    def test_too_few_points(self):
        with pytest.raises(CrossSectionError, match="at least 3"):
            extract_cross_section([(1e11, 100.0), (2e11, 200.0)], 330.0)

    def test_decreasing_rates_rejected(self):
        with pytest.raises(CrossSectionError):
            extract_cross_section([(1e11, 300.0), (2e11, 200.0), (3e11, 100.0)], 330.0)
