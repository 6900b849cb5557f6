"""Mean-field spin-exchange collisions.

Each collision with a mean-field partner atom B erases the coherence between
the singlet and triplet states of the two valence electrons:

    d rho_A/dt = R_c [Tr_B(P_s rho_AB P_s + P_t rho_AB P_t) - rho_A],
    rho_AB = rho_A kron rho_B

with P_s = 1/4 - S_A.S_B and P_t = 3/4 + S_A.S_B acting on the electrons
only. The map is evaluated in the uncoupled (m_S, m_I) basis of each atom,
index u = 4 (m_S + 1/2) + (m_I + 3/2), and rotated back to (F, m_F) with a
fixed Clebsch-Gordan unitary.

Complete singlet-triplet erasure relaxes <I.S> at half the collision rate,
so the collision rate R_c is twice the exchange rate R = n sigma v_rel.
With this convention the hyperfine population of an unpolarized ensemble
decays at R. The F=2 Zeeman coherences then relax more slowly: the slowest
Delta m = 2 mode decays at 9R/16 (``ZEEMAN_COHERENCE_FRACTION``), so the
Ramsey decoherence rate sits near gamma0 + 9R/16, not at the hyperfine rate.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import constants as sc
from sympy import Rational, S
from sympy.physics.wigner import clebsch_gordan

from src.analysis.fitting import FitInputError, linear_fit
from src.physics.atomic_structure import NUM_GROUND, NUM_LEVELS, PhysicalConstants
from src.physics.liouville import (
    DIM,
    DensityMatrix,
    ExponentialCache,
    Liouvillian,
    propagate,
)
from src.types import ExitCode, RelaxError
from src.utils.logger import get_logger


COLLISIONS_PER_EXCHANGE = 2.0

# Slowest F=2 Delta m = 2 coherence mode over R, unpolarized partner
ZEEMAN_COHERENCE_FRACTION = 9 / 16

# Default refresh interval in units of 1 / R
REFRESH_FRACTION = 0.1

_RB87_MASS_KG = PhysicalConstants().mass_kg


class SpinExchangeConvergenceError(RelaxError):
    """Segment iteration did not reach the self-consistency tolerance."""
    error_code = ExitCode.CONVERGENCE_ERROR


class CrossSectionError(RelaxError):
    """Cross-section regression failed (too few points or non-positive slope)."""
    error_code = ExitCode.CONVERGENCE_ERROR


@dataclass(frozen=True)
class SpinExchangeConfig:
    """Spin-exchange parameters for one density point.

    Attributes:
        cross_section_cm2: Exchange cross-section sigma
        density_cm3: Rubidium density n (0 disables exchange)
        temperature_k: Vapor temperature
        refresh_s: Mean-field refresh interval, None for min(0.1 / R, segment)
        tolerance: Max entrywise change for segment self-consistency
        max_iterations: Iteration cap for segment self-consistency
        iterate_segments: Iterate each segment to a fixed point
    """
    cross_section_cm2: float
    density_cm3: float
    temperature_k: float
    refresh_s: float | None = None
    tolerance: float = 1e-8
    max_iterations: int = 50
    iterate_segments: bool = False

    def __post_init__(self) -> None:
        if self.cross_section_cm2 < 0 or self.density_cm3 < 0:
            raise ValueError("Cross-section and density must be >= 0")
        if not self.temperature_k > 0:
            raise ValueError(f"Temperature must be positive, got {self.temperature_k}")
        if self.refresh_s is not None and not self.refresh_s > 0:
            raise ValueError(f"Refresh interval must be positive, got {self.refresh_s}")


@dataclass
class Trajectory:
    """States at the refresh boundaries of one segment."""
    times: np.ndarray
    states: list[DensityMatrix] = field(default_factory=list)
    iterations: int = 1

    @property
    def final(self) -> DensityMatrix:
        return self.states[-1]


def mean_relative_speed(temperature_k: float, mass_kg: float = _RB87_MASS_KG) -> float:
    """sqrt(16 k T / (pi m)) in cm/s, identical particles."""
    return math.sqrt(16 * sc.k * temperature_k / (math.pi * mass_kg)) * 100.0


def se_rate(cfg: SpinExchangeConfig, mass_kg: float = _RB87_MASS_KG) -> float:
    """R = n sigma v_rel in s^-1."""
    return cfg.density_cm3 * cfg.cross_section_cm2 * mean_relative_speed(cfg.temperature_k, mass_kg)


@lru_cache(maxsize=1)
def uncoupled_basis_unitary() -> np.ndarray:
    """U[u, k]: column k is ground level k in the (m_S, m_I) basis."""
    half = Rational(1, 2)
    nuclear = Rational(3, 2)
    u = np.zeros((NUM_GROUND, NUM_GROUND))
    k = 0
    for F in (1, 2):
        for m in range(-F, F + 1):
            for i_s, m_s in enumerate((-half, half)):
                for i_i in range(4):
                    m_i = -nuclear + i_i
                    if m_s + m_i != m:
                        continue
                    u[4 * i_s + i_i, k] = float(clebsch_gordan(half, nuclear, S(F), m_s, m_i, S(m)))
            k += 1
    return u


@lru_cache(maxsize=1)
def _projector_tensors() -> tuple[np.ndarray, np.ndarray]:
    s_plus = np.array([[0.0, 0.0], [1.0, 0.0]])  # basis (m_S = -1/2, +1/2)
    sx = 0.5 * (s_plus + s_plus.T)
    sy = -0.5j * (s_plus - s_plus.T)
    sz = np.diag([-0.5, 0.5])
    eye4 = np.eye(4)
    eye8 = np.eye(NUM_GROUND)
    dot = np.zeros((64, 64), dtype=complex)
    for s in (sx, sy, sz):
        a = np.kron(np.kron(s, eye4), eye8)
        b = np.kron(eye8, np.kron(s, eye4))
        dot += a @ b
    ident = np.eye(64)
    p_s = 0.25 * ident - dot
    p_t = 0.75 * ident + dot
    shape = (NUM_GROUND,) * 4
    return p_s.reshape(shape), p_t.reshape(shape)


def mean_field_from(rho: DensityMatrix) -> np.ndarray:
    """Normalized ground block of a 16x16 state (or an 8x8 block)."""
    block = np.asarray(rho)[:NUM_GROUND, :NUM_GROUND]
    tr = np.trace(block).real
    if not tr > 0:
        raise ValueError("Ground block has no population; mean-field partner undefined")
    return block / tr


def product_space_embed(rho_g: np.ndarray, mf: np.ndarray) -> np.ndarray:
    """rho_A kron rho_B in the uncoupled basis of both atoms (64x64)."""
    if rho_g.shape != (NUM_GROUND, NUM_GROUND) or mf.shape != (NUM_GROUND, NUM_GROUND):
        raise ValueError(f"Expected 8x8 ground blocks, got {rho_g.shape} and {mf.shape}")
    u = uncoupled_basis_unitary()
    return np.kron(u @ rho_g @ u.T, u @ mf @ u.T)


def se_superoperator_apply(rho_g: np.ndarray, mf: np.ndarray, rate: float) -> np.ndarray:
    """Collision term for the ground block at collision rate ``rate`` (8x8)."""
    u = uncoupled_basis_unitary()
    rho_ab = product_space_embed(rho_g, mf)
    p_s, p_t = (p.reshape(64, 64) for p in _projector_tensors())
    after = p_s @ rho_ab @ p_s + p_t @ rho_ab @ p_t
    reduced = np.einsum("abcb->ac", after.reshape((NUM_GROUND,) * 4))
    return rate * (u.T @ reduced @ u - rho_g)


def se_superoperator(mf: np.ndarray, rate: float) -> np.ndarray:
    """64x64 column-stacked linear map of the collision term for a frozen partner."""
    u = uncoupled_basis_unitary()
    mf_unc = u @ mf @ u.T
    total = np.zeros((NUM_GROUND,) * 4, dtype=complex)
    for p in _projector_tensors():
        total += np.einsum("abcd,de,fegb->agcf", p, mf_unc, p)
    s_unc = total.transpose(1, 0, 3, 2).reshape(64, 64)
    to_unc = np.kron(u, u)  # vec(U rho U^T) for real U
    s_f = to_unc.T @ s_unc @ to_unc
    return rate * (s_f - np.eye(64))


def f2_coherence_rates(mf: np.ndarray, exchange_rate: float, delta_m: int = 2) -> np.ndarray:
    """Decay rates of the F=2 coherences |m><m - delta_m| under exchange alone, ascending.

    Eigenvalues of the collision term restricted to that block (the other
    blocks precess at different frequencies in a field).
    """
    if not 0 < delta_m <= 4:
        raise ValueError(f"delta_m must be in 1..4, got {delta_m}")
    # F=2 occupies ground indices 3..7 with m = -2..2
    index = [(m + 5) + NUM_GROUND * (m - delta_m + 5) for m in range(delta_m - 2, 3)]
    block = se_superoperator(mf, COLLISIONS_PER_EXCHANGE * exchange_rate)[np.ix_(index, index)]
    return np.sort(-np.linalg.eigvals(block).real)


_GROUND_VEC_INDEX = np.array([i + NUM_LEVELS * j for j in range(NUM_GROUND) for i in range(NUM_GROUND)])


def embed_ground_superoperator(s64: np.ndarray) -> np.ndarray:
    """Place a ground-block superoperator into the 256x256 space."""
    out = np.zeros((DIM, DIM), dtype=complex)
    out[np.ix_(_GROUND_VEC_INDEX, _GROUND_VEC_INDEX)] = s64
    return out


def collision_liouvillian(mf: np.ndarray, cfg: SpinExchangeConfig) -> Liouvillian:
    """Exchange term with a frozen partner as a 256x256 Liouvillian."""
    rate = COLLISIONS_PER_EXCHANGE * se_rate(cfg)
    return Liouvillian(embed_ground_superoperator(se_superoperator(mf, rate)), "spin-exchange")


def self_consistent_evolve(
    rho: DensityMatrix,
    dynamics: Liouvillian,
    cfg: SpinExchangeConfig,
    duration: float,
    *,
    refresh_s: float | None = None,
    iterate: bool | None = None,
    cache: ExponentialCache | None = None,
) -> Trajectory:
    """Propagate through one constant-field segment with spin exchange.

    The segment is cut into refresh intervals; within each the partner is
    frozen at the normalized ground block at the interval start. With
    ``iterate`` the whole segment is repeated, each pass freezing the
    partner at the interval midpoint of the previous pass, until the max
    entrywise change of the states is below ``cfg.tolerance``.

    Raises:
        SpinExchangeConvergenceError: If the iteration cap is reached
    """
    rate = se_rate(cfg)
    if rate == 0 or duration == 0:
        final = propagate(rho, dynamics, duration, cache=cache)
        return Trajectory(np.array([0.0, duration]), [np.asarray(rho), final])

    interval = refresh_s or cfg.refresh_s or min(REFRESH_FRACTION / rate, duration)
    steps = max(1, math.ceil(duration / interval - 1e-9))
    dt = duration / steps
    times = np.linspace(0.0, duration, steps + 1)

    def run(partners: list[np.ndarray] | None) -> list[DensityMatrix]:
        states = [np.asarray(rho, dtype=complex)]
        for i in range(steps):
            mf = partners[i] if partners is not None else mean_field_from(states[-1])
            L = dynamics + collision_liouvillian(mf, cfg)
            states.append(propagate(states[-1], L, dt, cache=None))
        return states

    states = run(None)
    iterate = cfg.iterate_segments if iterate is None else iterate
    if not iterate:
        return Trajectory(times, states)

    logger = get_logger()
    for iteration in range(2, cfg.max_iterations + 1):
        partners = [mean_field_from(0.5 * (a + b)) for a, b in zip(states[:-1], states[1:])]
        new_states = run(partners)
        change = max(float(np.max(np.abs(a - b))) for a, b in zip(states, new_states))
        states = new_states
        if change < cfg.tolerance:
            logger.debug(f"Spin-exchange segment converged after {iteration} passes ({change:.2e})")
            return Trajectory(times, states, iteration)
    raise SpinExchangeConvergenceError(
        f"Spin-exchange segment did not converge in {cfg.max_iterations} passes"
    )


@dataclass(frozen=True)
class CrossSection:
    """Result of the rate-versus-density regression."""
    sigma_cm2: float
    sigma_err_cm2: float
    intercept_per_s: float
    intercept_err_per_s: float
    r_squared: float


def extract_cross_section(
    rates: Sequence[tuple[float, float]],
    temperature: float | Sequence[float],
    uncertainties: Sequence[float] | None = None,
    mass_kg: float = _RB87_MASS_KG,
) -> CrossSection:
    """Exchange cross-section from (n, gamma) pairs.

    With a single temperature the slope of gamma versus n is divided by
    v_rel(T). With per-point temperatures gamma is regressed against
    n v_rel(T_i) directly. Intercept free.

    Raises:
        CrossSectionError: If fewer than 3 points or the slope is not positive
    """
    if len(rates) < 3:
        raise CrossSectionError(f"Need at least 3 density points, got {len(rates)}")
    n = np.array([r[0] for r in rates], dtype=float)
    gamma = np.array([r[1] for r in rates], dtype=float)
    temps = np.broadcast_to(np.asarray(temperature, dtype=float), n.shape)
    v_rel = np.array([mean_relative_speed(t, mass_kg) for t in temps])
    x = n * v_rel
    weights = None if uncertainties is None else 1.0 / np.asarray(uncertainties, dtype=float) ** 2

    try:
        fit = linear_fit(x, gamma, weights)
    except FitInputError as e:
        raise CrossSectionError(str(e)) from e
    if not fit.slope > 0:
        raise CrossSectionError(f"Rate does not increase with density (slope {fit.slope:.3e})")

    return CrossSection(
        sigma_cm2=fit.slope,
        sigma_err_cm2=math.sqrt(max(fit.covariance[0, 0], 0.0)),
        intercept_per_s=fit.intercept,
        intercept_err_per_s=math.sqrt(max(fit.covariance[1, 1], 0.0)),
        r_squared=fit.r_squared,
    )


__all__ = [
    "COLLISIONS_PER_EXCHANGE",
    "ZEEMAN_COHERENCE_FRACTION",
    "SpinExchangeConvergenceError",
    "CrossSectionError",
    "SpinExchangeConfig",
    "Trajectory",
    "CrossSection",
    "mean_relative_speed",
    "se_rate",
    "uncoupled_basis_unitary",
    "mean_field_from",
    "product_space_embed",
    "se_superoperator_apply",
    "se_superoperator",
    "f2_coherence_rates",
    "embed_ground_superoperator",
    "collision_liouvillian",
    "self_consistent_evolve",
    "extract_cross_section",
]
