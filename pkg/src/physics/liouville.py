"""Master equation assembly, propagation, Doppler averaging and absorption.

Density matrices are 16x16 complex arrays in the canonical level order of
``atomic_structure``. Superoperators act on the column-stacked state
``vec(rho) = rho.reshape(-1, order="F")``, so that

    vec(A rho B) = (B^T kron A) vec(rho)

Rotating frame: all laser components of one FieldConfig share one optical
frequency omega_L. Ground levels keep their hyperfine energies, excited
levels are shifted down by omega_L - k v. A laser drives its own ground
manifold into both excited manifolds, so the far-detuned excited partner
stays in the Hamiltonian as a detuned coupling. The other ground manifold
(6.8 GHz away) is not driven.

Usage:
    scheme = build_level_scheme()
    relax = RelaxationConfig(gamma0=50.0, gamma_p=pressure_broadening(30.0))
    pump = FieldConfig((LaserComponent((1, 2), "linear", rabi_from_power(1.5)),))
    L = build_dynamics(scheme, pump, relax)
    rho = propagate(thermal_state(scheme), L, 1e-3)
"""

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy import constants as sc
from scipy.linalg import expm

from src.physics.atomic_structure import (
    NUM_GROUND,
    NUM_LEVELS,
    LevelScheme,
    check_field,
    manifold_indices,
    zeeman_shifts,
)
from src.types import DecayTrace, ExitCode, RelaxError
from src.utils.logger import get_logger


DensityMatrix = NDArray[np.complex128]

DIM = NUM_LEVELS * NUM_LEVELS

# Spherical components of each polarization (Condon-Shortley, z = quantization axis)
POLARIZATION_COMPONENTS: dict[str, dict[int, float]] = {
    "sigma+": {1: 1.0},
    "sigma-": {-1: 1.0},
    "pi": {0: 1.0},
    "linear": {1: -1.0 / np.sqrt(2.0), -1: 1.0 / np.sqrt(2.0)},
}

# Tolerances of the DensityMatrix checks
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-9

# propagate() renormalizes above this drift and refuses results below -POSITIVITY_FAIL
DRIFT_TOL = 1e-12
POSITIVITY_FAIL = 1e-6

# Rabi frequency (rad/s) produced by 1 mW
DEFAULT_RABI_CALIBRATION = 9.2e6

# Rb D1 in Ne, FWHM per Torr (Hz)
DEFAULT_BROADENING_HZ_PER_TORR = 9.84e6


class FieldConfigError(RelaxError):
    """Invalid laser/field configuration."""
    error_code = ExitCode.VALIDATION_ERROR


class DimensionError(RelaxError):
    """Hamiltonian or superoperator of the wrong shape."""
    error_code = ExitCode.VALIDATION_ERROR


class PositivityError(RelaxError):
    """Propagated state lost positivity beyond numerical tolerance."""
    error_code = ExitCode.CONVERGENCE_ERROR


class ProbeWeaknessError(RelaxError):
    """Probe too strong for the linear-absorption evaluation."""
    error_code = ExitCode.VALIDATION_ERROR


class ProbeBackActionError(RelaxError):
    """A probe pulse moved ground populations by more than the allowed limit."""
    error_code = ExitCode.VALIDATION_ERROR


@dataclass(frozen=True)
class LaserComponent:
    """One laser acting on the atom.

    Attributes:
        transition: (F, F') the laser is tuned to
        polarization: "sigma+", "sigma-", "pi" or "linear"
        rabi: Rabi frequency scale Omega (rad/s)
        detuning: Detuning from the target transition (rad/s)
    """
    transition: tuple[int, int]
    polarization: str
    rabi: float
    detuning: float = 0.0

    def __post_init__(self) -> None:
        F, F_prime = self.transition
        if F not in (1, 2) or F_prime not in (1, 2):
            raise FieldConfigError(f"Unknown D1 transition F={F} -> F'={F_prime}")
        if self.polarization not in POLARIZATION_COMPONENTS:
            raise FieldConfigError(f"Unknown polarization '{self.polarization}'")
        if not self.rabi >= 0:
            raise FieldConfigError(f"Rabi frequency must be >= 0, got {self.rabi}")


@dataclass(frozen=True)
class FieldConfig:
    """Piecewise-constant fields for one segment.

    Attributes:
        lasers: Laser components (empty for dark segments)
        b_z: Axial magnetic field (gauss)
        velocity: Atom velocity along the beam (m/s)
    """
    lasers: tuple[LaserComponent, ...] = ()
    b_z: float = 0.0
    velocity: float = 0.0

    def __post_init__(self) -> None:
        check_field(self.b_z)

    @property
    def is_dark(self) -> bool:
        return all(laser.rabi == 0 for laser in self.lasers)

    def dark(self) -> "FieldConfig":
        """Same field and velocity with the lasers switched off."""
        return FieldConfig((), self.b_z, self.velocity)


@dataclass(frozen=True)
class RelaxationConfig:
    """Incoherent rates.

    Attributes:
        gamma0: Uniform ground relaxation rate (s^-1)
        gamma_p: Pressure broadening of the optical coherences (rad/s, HWHM)
    """
    gamma0: float = 50.0
    gamma_p: float = 0.0

    def __post_init__(self) -> None:
        if self.gamma0 < 0 or self.gamma_p < 0:
            raise ValueError("Relaxation rates must be >= 0")

    def optical_half_width(self, scheme: LevelScheme) -> float:
        return scheme.gamma / 2 + self.gamma_p


@dataclass(frozen=True, eq=False)
class Liouvillian:
    """256x256 generator for one piecewise-constant segment.

    Attributes:
        matrix: Superoperator acting on column-stacked states
        tag: Description of the pieces it was built from
    """
    matrix: np.ndarray
    tag: str = ""
    _key: list[str] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if self.matrix.shape != (DIM, DIM):
            raise DimensionError(f"Liouvillian must be {DIM}x{DIM}, got {self.matrix.shape}")

    @property
    def key(self) -> str:
        """Content hash used by the exponential cache."""
        if not self._key:
            data = np.ascontiguousarray(self.matrix)
            self._key.append(hashlib.sha1(data.tobytes()).hexdigest())
        return self._key[0]

    def __add__(self, other: "Liouvillian") -> "Liouvillian":
        return Liouvillian(self.matrix + other.matrix, f"{self.tag}+{other.tag}")

    def apply(self, rho: DensityMatrix) -> DensityMatrix:
        """d rho / dt."""
        return unvec(self.matrix @ vec(rho))

    def trace_residual(self) -> float:
        """max |vec(I)^T L|, zero for a trace-preserving generator."""
        return float(np.max(np.abs(vec(np.eye(NUM_LEVELS)) @ self.matrix)))


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    return np.asarray(v).reshape(NUM_LEVELS, NUM_LEVELS, order="F")


def spre(a: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> a rho."""
    return np.kron(np.eye(a.shape[0]), a)


def spost(b: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> rho b."""
    return np.kron(b.T, np.eye(b.shape[0]))


def lindblad_dissipator(c: np.ndarray) -> np.ndarray:
    """D[c] rho = c rho c^+ - {c^+ c, rho} / 2."""
    cdc = c.conj().T @ c
    n = c.shape[0]
    return np.kron(c.conj(), c) - 0.5 * np.kron(np.eye(n), cdc) - 0.5 * np.kron(cdc.T, np.eye(n))


def rabi_from_power(power_mw: float, calibration: float = DEFAULT_RABI_CALIBRATION) -> float:
    """Omega = kappa sqrt(P), kappa in rad/s per sqrt(mW)."""
    if power_mw < 0:
        raise FieldConfigError(f"Laser power must be >= 0, got {power_mw} mW")
    return calibration * float(np.sqrt(power_mw))


def pressure_broadening(
    pressure_torr: float,
    coefficient_hz_per_torr: float = DEFAULT_BROADENING_HZ_PER_TORR,
) -> float:
    """Optical coherence dephasing (HWHM, rad/s) from a FWHM-per-Torr coefficient."""
    if pressure_torr < 0 or coefficient_hz_per_torr < 0:
        raise ValueError("Buffer pressure and broadening coefficient must be >= 0")
    return np.pi * coefficient_hz_per_torr * pressure_torr


def _laser_frequency(scheme: LevelScheme, fields: FieldConfig) -> float:
    """Common laser frequency relative to F=1 -> F'=1, as seen by the moving atom."""
    k = scheme.constants.wavenumber
    freqs = [scheme.transition_frequency(*laser.transition) + laser.detuning
             for laser in fields.lasers]
    ref = freqs[0]
    for laser, f in zip(fields.lasers, freqs):
        if not np.isclose(f, ref, rtol=0.0, atol=1e-6 * max(1.0, abs(ref))):
            raise FieldConfigError(
                f"Laser on F={laser.transition[0]} -> F'={laser.transition[1]} "
                f"({laser.polarization}) does not share the rotating frame of the first laser"
            )
    return ref - k * fields.velocity


def coupling_matrix(scheme: LevelScheme, laser: LaserComponent) -> np.ndarray:
    """16x16 matrix c with c[e, g] = sum_q eps_q amp(g, e, q) for the laser's ground manifold."""
    c = np.zeros((NUM_LEVELS, NUM_LEVELS))
    ground = manifold_indices("5S1/2", laser.transition[0])
    for q, eps in POLARIZATION_COMPONENTS[laser.polarization].items():
        c[:, ground] += eps * scheme.amplitudes[q + 1][ground, :].T
    return c


def build_hamiltonian(scheme: LevelScheme, fields: FieldConfig) -> np.ndarray:
    """Rotating-frame Hamiltonian (rad/s).

    Diagonal: hyperfine energies plus Zeeman shifts, excited levels shifted
    by the Doppler-shifted laser frequency. Off-diagonal: Omega/2 times the
    polarization-weighted dipole amplitudes.
    """
    h = np.diag(scheme.energies + zeeman_shifts(scheme, fields.b_z)).astype(complex)
    if not fields.lasers:
        return h

    omega_l = _laser_frequency(scheme, fields)
    excited = np.arange(NUM_GROUND, NUM_LEVELS)
    h[excited, excited] -= omega_l

    for laser in fields.lasers:
        if laser.rabi == 0:
            continue
        c = coupling_matrix(scheme, laser)
        h += 0.5 * laser.rabi * (c + c.T)
    return h


def _decay_key(scheme: LevelScheme, relax: RelaxationConfig) -> tuple:
    return (scheme.constants, relax.gamma_p)


_DECAY_CACHE: dict[tuple, np.ndarray] = {}


def build_optical_decay(scheme: LevelScheme, relax: RelaxationConfig) -> np.ndarray:
    """Spontaneous emission at Gamma plus dephasing Gamma_p of optical coherences."""
    key = _decay_key(scheme, relax)
    cached = _DECAY_CACHE.get(key)
    if cached is not None:
        return cached

    out = np.zeros((DIM, DIM), dtype=complex)
    for q in (-1, 0, 1):
        jump = np.sqrt(scheme.gamma) * scheme.amplitudes[q + 1].astype(complex)
        out += lindblad_dissipator(jump)

    if relax.gamma_p > 0:
        p_e = np.zeros((NUM_LEVELS, NUM_LEVELS), dtype=complex)
        p_e[NUM_GROUND:, NUM_GROUND:] = np.eye(NUM_LEVELS - NUM_GROUND)
        out += lindblad_dissipator(np.sqrt(2 * relax.gamma_p) * p_e)

    out.flags.writeable = False
    _DECAY_CACHE[key] = out
    return out


def build_uniform_relaxation(scheme: LevelScheme, gamma0: float) -> np.ndarray:
    """gamma0 (thermal Tr_g(rho) - rho_g) acting on the ground block."""
    if gamma0 < 0:
        raise ValueError(f"gamma0 must be >= 0, got {gamma0}")
    out = np.zeros((DIM, DIM), dtype=complex)
    ground = range(NUM_GROUND)
    diag = [i + NUM_LEVELS * i for i in ground]
    for i in ground:
        for j in ground:
            out[i + NUM_LEVELS * j, i + NUM_LEVELS * j] -= gamma0
    for a in diag:
        for b in diag:
            out[a, b] += gamma0 / NUM_GROUND
    return out


def assemble_liouvillian(
    hamiltonian: np.ndarray,
    *decay: np.ndarray,
    tag: str = "",
) -> Liouvillian:
    """L = -i[H, .] + sum of decay superoperators."""
    if hamiltonian.shape != (NUM_LEVELS, NUM_LEVELS):
        raise DimensionError(f"Hamiltonian must be 16x16, got {hamiltonian.shape}")
    matrix = -1j * (spre(hamiltonian) - spost(hamiltonian))
    for d in decay:
        if d.shape != (DIM, DIM):
            raise DimensionError(f"Decay superoperator must be {DIM}x{DIM}, got {d.shape}")
        matrix = matrix + d
    return Liouvillian(matrix, tag)


_DYNAMICS_CACHE: dict[tuple, Liouvillian] = {}


def build_dynamics(
    scheme: LevelScheme,
    fields: FieldConfig,
    relax: RelaxationConfig,
    *,
    include_relaxation: bool = True,
) -> Liouvillian:
    """Full single-atom Liouvillian for one segment (spin exchange excluded)."""
    key = (scheme.constants, fields, relax, include_relaxation)
    cached = _DYNAMICS_CACHE.get(key)
    if cached is not None:
        return cached

    parts = [build_optical_decay(scheme, relax)]
    if include_relaxation and relax.gamma0 > 0:
        parts.append(build_uniform_relaxation(scheme, relax.gamma0))
    tag = f"lasers={len(fields.lasers)} B={fields.b_z:g}G v={fields.velocity:g}"
    L = assemble_liouvillian(build_hamiltonian(scheme, fields), *parts, tag=tag)

    if len(_DYNAMICS_CACHE) > 256:
        _DYNAMICS_CACHE.clear()
    _DYNAMICS_CACHE[key] = L
    return L


class ExponentialCache:
    """LRU cache of exp(L dt) keyed by (Liouvillian content, dt).

    One instance per process; worker processes of a sweep each own theirs,
    so results do not depend on the schedule.
    """

    def __init__(self, maxsize: int = 64):
        self._maxsize = maxsize
        self._store: OrderedDict[tuple[str, float], np.ndarray] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def get(self, liouvillian: Liouvillian, dt: float) -> np.ndarray:
        key = (liouvillian.key, float(dt))
        found = self._store.get(key)
        if found is not None:
            self.hits += 1
            self._store.move_to_end(key)
            return found
        self.misses += 1
        prop = expm(liouvillian.matrix * dt)
        self._store[key] = prop
        if len(self._store) > self._maxsize:
            self._store.popitem(last=False)
        return prop

    def clear(self) -> None:
        self._store.clear()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._store)


_default_cache = ExponentialCache()


def get_exponential_cache() -> ExponentialCache:
    return _default_cache


def propagate(
    rho: DensityMatrix,
    liouvillian: Liouvillian,
    dt: float,
    *,
    cache: ExponentialCache | None = _default_cache,
    check_positivity: bool = True,
) -> DensityMatrix:
    """rho(t + dt) = exp(L dt) rho(t).

    Pass ``cache=None`` for generators that will not recur (e.g. with a
    frozen spin-exchange partner).

    Raises:
        PositivityError: If the smallest eigenvalue drops below -1e-6 of the trace
    """
    if dt < 0:
        raise ValueError(f"Propagation step must be >= 0, got {dt}")
    if dt == 0:
        return np.array(rho, dtype=complex, copy=True)

    prop = cache.get(liouvillian, dt) if cache is not None else expm(liouvillian.matrix * dt)
    out = unvec(prop @ vec(rho))

    logger = get_logger()
    herm_drift = float(np.max(np.abs(out - out.conj().T)))
    if herm_drift > DRIFT_TOL:
        logger.debug(f"Re-Hermitizing after propagation (drift {herm_drift:.2e})")
        out = 0.5 * (out + out.conj().T)

    tr_in = np.trace(rho).real
    tr_out = np.trace(out).real
    trace_drift = abs(tr_out - tr_in)
    if trace_drift > DRIFT_TOL * max(1.0, abs(tr_in)) and tr_out != 0:
        logger.debug(f"Renormalizing trace after propagation (drift {trace_drift:.2e})")
        out = out * (tr_in / tr_out)

    if check_positivity and tr_in > 0:
        lowest = float(np.linalg.eigvalsh(0.5 * (out + out.conj().T))[0])
        if lowest < -POSITIVITY_FAIL * tr_in:
            raise PositivityError(
                f"Density matrix lost positivity (eigenvalue {lowest:.3e}) after dt={dt:g} s"
            )
    return out


def density_matrix_violations(rho: DensityMatrix) -> list[str]:
    """Names of the DensityMatrix invariants rho violates (empty if valid)."""
    problems: list[str] = []
    if rho.shape != (NUM_LEVELS, NUM_LEVELS):
        return [f"shape {rho.shape}"]
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    if herm > HERMITIAN_TOL:
        problems.append(f"hermiticity {herm:.2e}")
    tr = abs(np.trace(rho) - 1.0)
    if tr > TRACE_TOL:
        problems.append(f"trace {tr:.2e}")
    lowest = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
    if lowest < -POSITIVITY_TOL:
        problems.append(f"positivity {lowest:.2e}")
    return problems


def is_valid_density_matrix(rho: DensityMatrix) -> bool:
    return not density_matrix_violations(rho)


def doppler_nodes(
    temperature: float,
    n_groups: int,
    mass_kg: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite velocities (m/s) and normalized weights for the 1-D Maxwell distribution."""
    if n_groups < 1:
        raise ValueError(f"Need at least one velocity group, got {n_groups}")
    if not temperature > 0:
        raise ValueError(f"Temperature must be positive, got {temperature}")
    x, w = np.polynomial.hermite.hermgauss(n_groups)
    v = np.sqrt(2 * sc.k * temperature / mass_kg) * x
    return v, w / np.sqrt(np.pi)


def doppler_average(
    trace_fn: Callable[[float], DecayTrace],
    temperature: float,
    n_groups: int,
    mass_kg: float,
) -> DecayTrace:
    """Maxwell-weighted average of per-velocity traces.

    When the traces carry ``alpha_ss`` and ``alpha_ini`` metadata the
    normalized series is rebuilt from the averaged raw absorption;
    otherwise the normalized series is averaged directly.
    """
    velocities, weights = doppler_nodes(temperature, n_groups, mass_kg)
    traces = [trace_fn(float(v)) for v in velocities]
    first = traces[0]
    if n_groups == 1:
        return first

    for tr in traces[1:]:
        if tr.times.shape != first.times.shape or not np.allclose(tr.times, first.times):
            raise ValueError("Velocity groups produced traces on different time grids")

    raw = sum(w * tr.alpha_raw for w, tr in zip(weights, traces))
    norm = sum(w * tr.alpha_norm for w, tr in zip(weights, traces))
    pops = None
    if all(tr.populations is not None for tr in traces):
        pops = sum(w * tr.populations for w, tr in zip(weights, traces))  # type: ignore[operator]

    metadata = dict(first.metadata)
    metadata["doppler_groups"] = str(n_groups)
    if all("alpha_ss" in tr.metadata and "alpha_ini" in tr.metadata for tr in traces):
        a_ss = float(sum(w * float(tr.metadata["alpha_ss"]) for w, tr in zip(weights, traces)))
        a_ini = float(sum(w * float(tr.metadata["alpha_ini"]) for w, tr in zip(weights, traces)))
        norm = (raw - a_ss) / (a_ini - a_ss)
        metadata["alpha_ss"] = repr(a_ss)
        metadata["alpha_ini"] = repr(a_ini)

    return DecayTrace(first.times.copy(), np.asarray(raw), np.asarray(norm), metadata, pops)


@dataclass(frozen=True)
class ProbeSettings:
    """How absorption is evaluated."""
    weakness_ratio: float = 0.01
    back_action_limit: float = 0.005
    settle_lifetimes: float = 20.0


def _probe_rabi(probe: FieldConfig) -> float:
    active = [laser for laser in probe.lasers if laser.rabi > 0]
    if not active:
        raise ProbeWeaknessError("Absorption needs a probe with a nonzero Rabi frequency")
    transitions = {laser.transition for laser in active}
    if len(transitions) > 1:
        raise FieldConfigError("A probe must address a single transition")
    return max(laser.rabi for laser in active)


def _settle(
    rho: DensityMatrix,
    probe: FieldConfig,
    scheme: LevelScheme,
    relax: RelaxationConfig,
    settings: ProbeSettings,
    cache: ExponentialCache | None,
) -> tuple[DensityMatrix, float, float]:
    omega = _probe_rabi(probe)
    gamma_opt = relax.optical_half_width(scheme)
    if omega > settings.weakness_ratio * gamma_opt:
        raise ProbeWeaknessError(
            f"Probe Rabi frequency {omega:.3e} rad/s exceeds {settings.weakness_ratio:g} "
            f"of the optical half-width {gamma_opt:.3e} rad/s"
        )

    start = np.array(rho, dtype=complex, copy=True)
    start[:NUM_GROUND, NUM_GROUND:] = 0.0
    start[NUM_GROUND:, :NUM_GROUND] = 0.0

    bare = build_dynamics(scheme, probe, relax, include_relaxation=False)
    settled = propagate(start, bare, settings.settle_lifetimes / gamma_opt, cache=cache)
    return settled, omega, gamma_opt


def absorption_contributions(
    rho: DensityMatrix,
    probe: FieldConfig,
    scheme: LevelScheme,
    relax: RelaxationConfig | None = None,
    *,
    settings: ProbeSettings | None = None,
    cache: ExponentialCache | None = _default_cache,
) -> np.ndarray:
    """Per-pair absorption array indexed [g, e]; sums to ``absorption_coefficient``.

    Only pairs inside the probe's target manifolds (F -> F') contribute.
    """
    relax = relax or RelaxationConfig()
    settings = settings or ProbeSettings()
    settled, omega, gamma_opt = _settle(rho, probe, scheme, relax, settings, cache)

    F, F_prime = next(laser.transition for laser in probe.lasers if laser.rabi > 0)
    ground = manifold_indices("5S1/2", F)
    excited = manifold_indices("5P1/2", F_prime)

    coupling = np.zeros((NUM_LEVELS, NUM_LEVELS))
    for laser in probe.lasers:
        if laser.rabi > 0:
            coupling += (laser.rabi / omega) * coupling_matrix(scheme, laser)

    out = np.zeros((NUM_LEVELS, NUM_LEVELS))
    for g in ground:
        for e in excited:
            out[g, e] = (2 * gamma_opt / omega) * np.imag(coupling[e, g] * settled[g, e])
    return out


def absorption_coefficient(
    rho: DensityMatrix,
    probe: FieldConfig,
    scheme: LevelScheme,
    relax: RelaxationConfig | None = None,
    *,
    settings: ProbeSettings | None = None,
    cache: ExponentialCache | None = _default_cache,
    pulse_s: float | None = None,
) -> float:
    """Linear absorption of a weak probe.

    Optical coherences and excited populations left by earlier fields are
    discarded, the probe coherence is settled under the bare probe
    Liouvillian, and

        alpha = (2 gamma_opt / Omega) sum_{g, e} Im(c_eg rho_ge)

    so a resonant isolated transition of squared amplitude w and ground
    population p gives alpha = w p.

    With ``pulse_s`` the probe is also held to the per-pulse back-action
    limit for a pulse of that length. Stroboscopic records check every
    pulse (and the summed train) in ``ProtocolEngine.execute_sequence``.

    Raises:
        ProbeWeaknessError: If Omega exceeds the weakness ratio of the optical half-width
        ProbeBackActionError: If a pulse of ``pulse_s`` moves a ground population past the limit
    """
    relax = relax or RelaxationConfig()
    settings = settings or ProbeSettings()
    if pulse_s is not None:
        check_back_action(rho, probe, pulse_s, scheme, relax, settings.back_action_limit, cache=cache)
    return float(absorption_contributions(
        rho, probe, scheme, relax, settings=settings, cache=cache
    ).sum())


def probe_back_action(
    rho: DensityMatrix,
    probe: FieldConfig,
    duration: float,
    scheme: LevelScheme,
    relax: RelaxationConfig,
    *,
    cache: ExponentialCache | None = _default_cache,
) -> float:
    """Largest ground population change caused by the probe alone over one pulse."""
    bare = build_dynamics(scheme, probe, relax, include_relaxation=False)
    after = propagate(rho, bare, duration, cache=cache)
    before_pops = np.real(np.diag(rho))[:NUM_GROUND]
    after_pops = np.real(np.diag(after))[:NUM_GROUND]
    return float(np.max(np.abs(after_pops - before_pops)))


def check_back_action(
    rho: DensityMatrix,
    probe: FieldConfig,
    duration: float,
    scheme: LevelScheme,
    relax: RelaxationConfig,
    limit: float,
    *,
    cache: ExponentialCache | None = _default_cache,
) -> float:
    """``probe_back_action``, raising ProbeBackActionError above ``limit``."""
    back = probe_back_action(rho, probe, duration, scheme, relax, cache=cache)
    if back > limit:
        raise ProbeBackActionError(
            f"Probe pulse of {duration:.3g} s changed a ground population by "
            f"{back:.2%} (limit {limit:.2%})"
        )
    return back


__all__ = [
    "DensityMatrix",
    "POLARIZATION_COMPONENTS",
    "DEFAULT_RABI_CALIBRATION",
    "DEFAULT_BROADENING_HZ_PER_TORR",
    "FieldConfigError",
    "DimensionError",
    "PositivityError",
    "ProbeWeaknessError",
    "ProbeBackActionError",
    "LaserComponent",
    "FieldConfig",
    "RelaxationConfig",
    "Liouvillian",
    "ExponentialCache",
    "ProbeSettings",
    "vec",
    "unvec",
    "spre",
    "spost",
    "lindblad_dissipator",
    "rabi_from_power",
    "pressure_broadening",
    "coupling_matrix",
    "build_hamiltonian",
    "build_optical_decay",
    "build_uniform_relaxation",
    "assemble_liouvillian",
    "build_dynamics",
    "get_exponential_cache",
    "propagate",
    "density_matrix_violations",
    "is_valid_density_matrix",
    "doppler_nodes",
    "doppler_average",
    "absorption_contributions",
    "absorption_coefficient",
    "probe_back_action",
    "check_back_action",
]
