"""Invariant suite.

Runs quick checks over each layer of the simulator and prints a pass/fail
table:

    atomic structure    transition weights, decay closure, thermal state
    Liouvillian         trace preservation of the pump generators, purity under
                        unitary evolution, linearity of propagation
    spin exchange       trace, thermal and stretched fixed points, conserved <F_z>,
                        positivity, Zeeman coherence modes
    dark states         Lambda and M decouple from F=2 -> F'=1 linear light
    fitting             analytic Jacobians, recovery of synthetic traces
    vapor               density/temperature round trip
    protocols           Zeeman frequency at 1 mG; with --full the cross-section
                        round trip (A), the two-rate decay (B), the Ramsey
                        oscillation, dark states and |M> share (C)

Usage:
    from src.commands.validate import execute_validate

    exit_code = execute_validate(config, full=True)
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm

from src.analysis.fitting import fit_decaying_sinusoid, fit_double_exponential, fit_exponential
from src.analysis.models import MODELS
from src.commands.common import PointResult, Runner, protocol_runner, resolve_density
from src.physics.atomic_structure import (
    NUM_GROUND,
    NUM_LEVELS,
    LevelScheme,
    build_level_scheme,
    load_constants,
    manifold_indices,
    reference_states,
    thermal_state,
)
from src.physics.liouville import (
    FieldConfig,
    LaserComponent,
    assemble_liouvillian,
    build_hamiltonian,
    coupling_matrix,
    density_matrix_violations,
    propagate,
    vec,
)
from src.physics.protocols import (
    dark_state_weights,
    harmonic_ratio,
    make_engine,
    oscillation_frequency_prediction,
)
from src.physics.spin_exchange import (
    ZEEMAN_COHERENCE_FRACTION,
    extract_cross_section,
    f2_coherence_rates,
    se_superoperator,
    se_superoperator_apply,
)
from src.physics.vapor import density_from_temperature, temperature_from_density
from src.types import DecayTrace, ExitCode, RelaxError, RunConfig
from src.utils.config import experiment_for_protocol
from src.utils.logger import get_logger


# Absolute tolerance of the exact algebraic checks
EXACT_TOL = 1e-12

# Pump generators may lose trace only at round-off relative to the natural linewidth
TRACE_TOL_LINEWIDTHS = 1e-9

# Ground F_z eigenvalues in canonical order
F_Z = np.array([-1.0, 0.0, 1.0, -2.0, -1.0, 0.0, 1.0, 2.0])


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


Check = Callable[[], CheckResult]


def check_transition_weights(scheme: LevelScheme) -> CheckResult:
    """sigma+ weights from F=1 m=-1, 0, +1 into F'=2 are 1/12, 1/4, 1/2."""
    ground = manifold_indices("5S1/2", 1)
    excited = manifold_indices("5P1/2", 2)
    weights = [scheme.amplitude(g, excited[i + 2], 1) ** 2 for i, g in enumerate(ground)]
    expected = [1 / 12, 1 / 4, 1 / 2]
    error = max(abs(w - e) for w, e in zip(weights, expected))
    return CheckResult(
        "sigma+ transition weights",
        error < EXACT_TOL,
        " : ".join(f"{w:.6f}" for w in weights),
    )


def check_decay_closure(scheme: LevelScheme) -> CheckResult:
    """Each excited level decays with total strength one."""
    total = sum(a.T @ a for a in scheme.amplitudes)
    excited = slice(NUM_GROUND, NUM_LEVELS)
    error = float(np.max(np.abs(total[excited, excited] - np.eye(NUM_LEVELS - NUM_GROUND))))
    return CheckResult("dipole decay closure", error < EXACT_TOL, f"max deviation {error:.1e}")


def check_thermal_state(scheme: LevelScheme) -> CheckResult:
    rho = thermal_state(scheme)
    problems = density_matrix_violations(rho)
    pops = np.real(np.diag(rho))[:NUM_GROUND]
    uniform = bool(np.allclose(pops, 1 / NUM_GROUND, atol=EXACT_TOL))
    return CheckResult(
        "thermal state",
        not problems and uniform,
        ", ".join(problems) or "uniform ground populations 1/8",
    )


def check_pump_generators(config: RunConfig, scheme: LevelScheme, density: float) -> CheckResult:
    """Pump Liouvillians of every protocol preserve the trace; one short step keeps rho valid."""
    tol = TRACE_TOL_LINEWIDTHS * scheme.gamma
    details = []
    passed = True
    for protocol in ("A", "B", "C"):
        engine = make_engine(
            experiment_for_protocol(config.experiment, protocol), config.numerics,
            density_cm3=density, constants_file=config.constants_file,
        )
        dynamics = engine.dynamics(engine.pump_fields())
        residual = dynamics.trace_residual()
        rho = propagate(thermal_state(scheme), dynamics, 1e-6, cache=None)
        problems = density_matrix_violations(rho)
        passed = passed and residual < tol and not problems
        details.append(f"{protocol}: {residual:.1e}" + (f" ({', '.join(problems)})" if problems else ""))
    return CheckResult("Liouvillian trace and positivity", passed, "; ".join(details))


def check_spin_exchange() -> CheckResult:
    """Exchange keeps the trace, fixes the thermal state and conserves <F_z> with itself as partner."""
    thermal = np.eye(NUM_GROUND, dtype=complex) / NUM_GROUND
    s = se_superoperator(thermal, 1.0)
    trace_error = float(np.max(np.abs(vec(np.eye(NUM_GROUND)) @ s)))
    fixed_error = float(np.max(np.abs(s @ vec(thermal))))

    oriented = np.diag([0.05, 0.10, 0.15, 0.02, 0.08, 0.12, 0.18, 0.30]).astype(complex)
    drift = se_superoperator_apply(oriented, oriented, 1.0)
    fz_error = abs(float(np.real(np.trace(np.diag(F_Z) @ drift))))
    passed = max(trace_error, fixed_error, fz_error) < 1e-10
    return CheckResult(
        "spin-exchange invariants",
        passed,
        f"trace {trace_error:.1e}, thermal {fixed_error:.1e}, d<F_z>/dt {fz_error:.1e}",
    )


def _random_state(rng: np.random.Generator, dim: int) -> np.ndarray:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def check_exchange_extremes(seed: int) -> CheckResult:
    """Stretched states are fixed points; a frozen-partner step keeps a random state valid."""
    worst_fixed = 0.0
    for index in (3, 7):  # |2, -2> and |2, +2>
        stretched = np.zeros((NUM_GROUND, NUM_GROUND), dtype=complex)
        stretched[index, index] = 1.0
        worst_fixed = max(
            worst_fixed, float(np.max(np.abs(se_superoperator_apply(stretched, stretched, 1.0))))
        )

    rng = np.random.default_rng(seed)
    rho = _random_state(rng, NUM_GROUND)
    step = expm(se_superoperator(rho, 1.0) * 0.7)
    after = (step @ vec(rho)).reshape(NUM_GROUND, NUM_GROUND, order="F")
    lowest = float(np.linalg.eigvalsh(0.5 * (after + after.conj().T))[0])
    trace_error = abs(np.trace(after).real - 1.0)
    passed = worst_fixed < 1e-12 and lowest > -1e-12 and trace_error < 1e-12
    return CheckResult(
        "spin-exchange fixed points and positivity",
        passed,
        f"stretched {worst_fixed:.1e}, lowest eigenvalue {lowest:.2e}",
    )


def check_zeeman_coherence_modes() -> CheckResult:
    """F=2 Delta m = 2 coherences relax at 9/16, 3/4 and 1 of R with an unpolarized partner."""
    thermal = np.eye(NUM_GROUND, dtype=complex) / NUM_GROUND
    rates = f2_coherence_rates(thermal, 1.0)
    expected = np.array([ZEEMAN_COHERENCE_FRACTION, 0.75, 1.0])
    error = float(np.max(np.abs(rates - expected)))
    return CheckResult(
        "Zeeman coherence modes",
        error < 1e-10,
        ", ".join(f"{r:.4f}" for r in rates) + " x R",
    )


def check_unitary_propagation(scheme: LevelScheme, seed: int) -> CheckResult:
    """Purity is conserved without dissipation and propagation is linear in rho."""
    fields = FieldConfig((LaserComponent((1, 2), "sigma+", 2 * math.pi * 1e6),))
    unitary = assemble_liouvillian(build_hamiltonian(scheme, fields), tag="unitary")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(NUM_LEVELS) + 1j * rng.standard_normal(NUM_LEVELS)
    pure = np.outer(v, v.conj()) / np.vdot(v, v).real
    out = propagate(pure, unitary, 1e-8, cache=None)
    purity_error = abs(float(np.trace(out @ out).real) - 1.0)

    mixed = _random_state(rng, NUM_LEVELS)
    a = 0.3
    combined = propagate(a * pure + (1 - a) * mixed, unitary, 1e-8, cache=None)
    separate = a * out + (1 - a) * propagate(mixed, unitary, 1e-8, cache=None)
    linearity_error = float(np.max(np.abs(combined - separate)))
    return CheckResult(
        "unitary purity and linearity",
        purity_error < 1e-8 and linearity_error < 1e-10,
        f"purity {purity_error:.1e}, linearity {linearity_error:.1e}",
    )


def check_model_jacobians() -> CheckResult:
    """Analytic Jacobians match central differences to 1e-6."""
    t = np.linspace(0.0, 0.02, 101)
    points = {
        "exponential": np.array([0.8, 250.0, 0.1]),
        "double_exponential": np.array([0.7, 400.0, -0.3, 50.0, 0.01]),
        "decaying_sinusoid": np.array([0.5, 230.0, 8800.0, 0.3, 0.02]),
    }
    worst = 0.0
    for name, p in points.items():
        model = MODELS[name]()
        jac = model.jacobian(t, p)
        numeric = np.empty_like(jac)
        for k in range(len(p)):
            h = 1e-6 * max(abs(p[k]), 1.0)
            up, down = p.copy(), p.copy()
            up[k] += h
            down[k] -= h
            numeric[:, k] = (model.evaluate(t, up) - model.evaluate(t, down)) / (2 * h)
        scale = max(1.0, float(np.max(np.abs(jac))))
        worst = max(worst, float(np.max(np.abs(jac - numeric))) / scale)
    return CheckResult("model Jacobians", worst < 1e-6, f"max relative deviation {worst:.1e}")


def check_fit_round_trips() -> CheckResult:
    """Noiseless double-exponential and decaying-sinusoid traces are recovered to 1e-6."""
    t = np.linspace(0.0, 0.05, 400)
    y = 0.5 * np.exp(-1000.0 * t) + 0.4 * np.exp(-100.0 * t) + 0.05
    double = fit_double_exponential(DecayTrace(t, y, y.copy(), {"protocol": "B"}))

    t = np.linspace(0.0, 0.02, 400)
    omega = 2 * math.pi * 1400.0
    y = 0.3 * np.exp(-200.0 * t) * np.sin(omega * t + 0.4) + 0.01
    ramsey = fit_decaying_sinusoid(DecayTrace(t, y, y.copy(), {"protocol": "C-subtracted"}))

    if not (double.converged and ramsey.converged):
        return CheckResult("fit round trips", False, f"{double.message}; {ramsey.message}")
    errors = [
        abs(double.param("gamma1") / 1000.0 - 1),
        abs(double.param("gamma2") / 100.0 - 1),
        abs(ramsey.param("omega") / omega - 1),
        abs(ramsey.param("gamma") / 200.0 - 1),
    ]
    return CheckResult(
        "fit round trips",
        max(errors) < 1e-6,
        f"max relative error {max(errors):.1e}",
    )


def check_dark_states(scheme: LevelScheme) -> CheckResult:
    """Lambda and M are dark for linear light on F=2 -> F'=1; Lambda* is not.

    Only the F'=1 rows count: the same light couples Lambda and M to F'=2.
    """
    laser = LaserComponent(transition=(2, 1), polarization="linear", rabi=1.0)
    c = coupling_matrix(scheme, laser)[manifold_indices("5P1/2", 1)]
    refs = reference_states(scheme)
    lam, m_state, lam_star = (float(np.linalg.norm(c @ v)) for v in (refs.lam, refs.m_state, refs.lam_star))
    return CheckResult(
        "dark states",
        lam < EXACT_TOL and m_state < EXACT_TOL and lam_star > 1e-3,
        f"|c Lambda| {lam:.1e}, |c M| {m_state:.1e}, |c Lambda*| {lam_star:.3f}",
    )


def check_exponential_fit(seed: int) -> CheckResult:
    """Fit of a seeded noisy exponential recovers its rate within 1%."""
    gamma = 250.0
    t = np.linspace(0.0, 0.02, 200)
    rng = np.random.default_rng(seed)
    y = 0.9 * np.exp(-gamma * t) + 0.02 + 1e-4 * rng.standard_normal(t.size)
    fit = fit_exponential(DecayTrace(t, y, y, {"protocol": "A"}))
    error = abs(fit.param("gamma") / gamma - 1) if fit.converged else math.inf
    return CheckResult(
        "exponential fit recovery",
        error < 0.01,
        f"gamma {fit.param('gamma'):.2f} s^-1 ({fit.message})",
    )


def check_vapor_round_trip() -> CheckResult:
    temperature = 330.0
    recovered = temperature_from_density(density_from_temperature(temperature))
    error = abs(recovered - temperature)
    return CheckResult("vapor round trip", error < 1e-6, f"{temperature:g} K -> {recovered:.9f} K")


def check_zeeman_frequency(scheme: LevelScheme) -> CheckResult:
    """Delta m = 2 coherence at 1 mG oscillates near 2 pi x 1.4 kHz."""
    omega, second = oscillation_frequency_prediction(1e-3, scheme)
    hz = omega / (2 * math.pi)
    return CheckResult(
        "Zeeman frequency at 1 mG",
        abs(hz / 1.4e3 - 1) < 0.01 and math.isclose(second, 2 * omega),
        f"{hz:.1f} Hz",
    )


# Densities of the --full cross-section round trip, and the one the B and C checks use
ROUND_TRIP_DENSITIES_CM3 = (1e11, 3.8e11, 9e11)
SHAPE_CHECK_DENSITY_CM3 = 3.8e11

def _fit_failure(name: str, result: PointResult) -> CheckResult | None:
    fit = result.fit
    if fit is None or not fit.converged:
        message = fit.message if fit else "no fit"
        return CheckResult(name, False, f"{result.point.label}: fit failed ({message})")
    return None


def check_cross_section_round_trip(config: RunConfig, run: Runner) -> CheckResult:
    """Protocol A at three densities gives back the configured cross-section within 5%."""
    name = "cross-section round trip (A)"
    sigma = config.experiment.spin_exchange.cross_section_cm2
    results = [run("A", n) for n in ROUND_TRIP_DENSITIES_CM3]
    for result in results:
        if failure := _fit_failure(name, result):
            return failure

    worst_rms = max(r.fit.rms_residual for r in results)
    xs = extract_cross_section(
        [(r.point.density_cm3, r.fit.param("gamma")) for r in results],
        [r.run.temperature_k for r in results],
    )
    error = abs(xs.sigma_cm2 / sigma - 1)
    return CheckResult(
        name,
        error < 0.05 and xs.r_squared > 0.99 and worst_rms < 0.02,
        f"sigma {xs.sigma_cm2:.3e} cm^2 ({error:.1%} off), R^2 {xs.r_squared:.4f}, rms {worst_rms:.1e}",
    )


def check_two_rate_decay(config: RunConfig, run: Runner, density: float) -> CheckResult:
    """Protocol B: opposite-sign amplitudes, fast rate near A's, slow rate near gamma0."""
    name = "two-rate decay (B)"
    hyperfine, two_rate = run("A", density), run("B", density)
    for result in (hyperfine, two_rate):
        if failure := _fit_failure(name, result):
            return failure

    gamma_a = hyperfine.fit.param("gamma")
    gamma0 = config.experiment.relaxation.gamma0_per_s
    fit = two_rate.fit
    g1, g2 = fit.param("gamma1"), fit.param("gamma2")
    opposite = fit.param("A1") * fit.param("A2") < 0
    return CheckResult(
        name,
        opposite and abs(g1 / gamma_a - 1) < 0.10 and abs(g2 / gamma0 - 1) < 0.10,
        f"gamma1 {g1:.1f} vs A {gamma_a:.1f} s^-1, gamma2 {g2:.1f} vs {gamma0:g} s^-1, "
        f"A1 {fit.param('A1'):+.3f}, A2 {fit.param('A2'):+.3f}",
    )


def check_ramsey_oscillation(
    config: RunConfig, scheme: LevelScheme, run: Runner, density: float
) -> CheckResult:
    """Protocol C: frequency within 1%, clean fit, and the Zeeman rate on the 9/16 exchange line.

    The slowest F=2 Delta m = 2 mode decays at gamma0 + 9R/16, so
    (gamma12 - gamma0) / (gamma_A - gamma0) is compared with 9/16 at 15%.
    """
    name = "Ramsey oscillation (C)"
    b_field = config.experiment.ramsey.b_field_gauss
    hyperfine, ramsey = run("A", density), run("C", density, b_field)
    for result in (hyperfine, ramsey):
        if failure := _fit_failure(name, result):
            return failure

    omega, _ = oscillation_frequency_prediction(b_field, scheme)
    fit = ramsey.fit
    gamma0 = config.experiment.relaxation.gamma0_per_s
    freq_error = abs(fit.param("omega") / omega - 1)
    rms = fit.rms_residual / fit.param("A")
    fraction = (fit.param("gamma") - gamma0) / (hyperfine.fit.param("gamma") - gamma0)
    return CheckResult(
        name,
        freq_error < 0.01 and rms < 0.03 and abs(fraction / ZEEMAN_COHERENCE_FRACTION - 1) < 0.15,
        f"omega off by {freq_error:.2%}, rms {rms:.1%} of amplitude, "
        f"exchange fraction {fraction:.3f} (expected {ZEEMAN_COHERENCE_FRACTION:.4f})",
    )


def check_dark_state_populations(
    config: RunConfig, scheme: LevelScheme, run: Runner, density: float
) -> CheckResult:
    """After the protocol C pump Lambda and M share F=2 evenly."""
    rho = run("C", density, config.experiment.ramsey.b_field_gauss).run.steady_state
    w = dark_state_weights(rho, scheme)
    even = all(0.45 <= x <= 0.55 for x in (w.lam, w.m_state))
    return CheckResult(
        "dark-state populations (C)",
        even and w.residual < 0.05,
        f"Lambda {w.lam:.3f}, M {w.m_state:.3f}, residual {w.residual:.3f}",
    )


def check_m_state_share(
    config: RunConfig, scheme: LevelScheme, run: Runner, density: float
) -> CheckResult:
    """|M> carries about half the fundamental; the second harmonic stays weak."""
    b_field = config.experiment.ramsey.b_field_gauss
    result = run("C", density, b_field)
    engine = make_engine(
        experiment_for_protocol(config.experiment, "C"), config.numerics,
        density_cm3=density, temperature_k=result.run.temperature_k,
        constants_file=config.constants_file,
    )
    share = engine.m_state_contribution(result.run.steady_state, b_z=b_field)
    subtracted = result.run.traces["subtracted"]
    window = subtracted.window(float(subtracted.metadata["fit_start_s"]))
    omega, _ = oscillation_frequency_prediction(b_field, scheme)
    second = harmonic_ratio(window, omega)
    return CheckResult(
        "|M> share (C)",
        0.3 <= share <= 0.7 and second < 0.1,
        f"|M> share {share:.2f}, second harmonic {second:.1%}",
    )


def build_checks(config: RunConfig, *, full: bool = False) -> list[tuple[str, Check]]:
    """(label, check) pairs in run order; ``full`` adds the slow protocol runs."""
    scheme = build_level_scheme(load_constants(config.constants_file))
    density = resolve_density(config, None)
    checks: list[tuple[str, Check]] = [
        ("atomic structure", lambda: check_transition_weights(scheme)),
        ("atomic structure", lambda: check_decay_closure(scheme)),
        ("atomic structure", lambda: check_thermal_state(scheme)),
        ("Liouvillian", lambda: check_pump_generators(config, scheme, density)),
        ("Liouvillian", lambda: check_unitary_propagation(scheme, config.seed)),
        ("spin exchange", check_spin_exchange),
        ("spin exchange", lambda: check_exchange_extremes(config.seed)),
        ("spin exchange", check_zeeman_coherence_modes),
        ("dark states", lambda: check_dark_states(scheme)),
        ("fitting", check_model_jacobians),
        ("fitting", check_fit_round_trips),
        ("fitting", lambda: check_exponential_fit(config.seed)),
        ("vapor", check_vapor_round_trip),
        ("protocols", lambda: check_zeeman_frequency(scheme)),
    ]
    if full:
        run = protocol_runner(config)
        n = SHAPE_CHECK_DENSITY_CM3
        checks += [
            ("protocols", lambda: check_cross_section_round_trip(config, run)),
            ("protocols", lambda: check_two_rate_decay(config, run, n)),
            ("protocols", lambda: check_ramsey_oscillation(config, scheme, run, n)),
            ("protocols", lambda: check_dark_state_populations(config, scheme, run, n)),
            ("protocols", lambda: check_m_state_share(config, scheme, run, n)),
        ]
    return checks


def execute_validate(config: RunConfig, *, full: bool = False) -> int:
    """Run the invariant suite.

    Returns:
        Exit code; VALIDATION_ERROR if any check fails
    """
    logger = get_logger()

    try:
        results: list[CheckResult] = []
        layers: list[str] = []
        for layer, check in build_checks(config, full=full):
            with logger.spinner(f"Checking {layer}..."):
                try:
                    result = check()
                except (RelaxError, ValueError) as e:
                    result = CheckResult(f"{layer} (raised)", False, str(e))
            results.append(result)
            layers.append(layer)
            if result.passed:
                logger.success(result.name)
            else:
                logger.error(f"{result.name}: {result.detail}")

        logger.table(
            "Invariant suite",
            ["layer", "check", "result", "detail"],
            [
                [layer, r.name, "pass" if r.passed else "FAIL", r.detail]
                for layer, r in zip(layers, results)
            ],
        )

        failed = [r for r in results if not r.passed]
        if failed:
            logger.error(f"{len(failed)} of {len(results)} checks failed")
            return ExitCode.VALIDATION_ERROR

        logger.success(f"All {len(results)} checks passed")
        return ExitCode.SUCCESS

    except RelaxError as e:
        logger.error(str(e))
        return e.error_code
    except KeyboardInterrupt:
        logger.warning("\nOperation cancelled by user")
        return ExitCode.INTERRUPT


__all__ = ["CheckResult", "build_checks", "execute_validate"]
