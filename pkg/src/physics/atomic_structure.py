"""87Rb D1 level scheme, dipole couplings, Zeeman shifts and the thermal state.

Canonical level order (index: term, F, m_F ascending):

    0-2    5S1/2  F=1   m_F = -1, 0, +1
    3-7    5S1/2  F=2   m_F = -2 .. +2
    8-10   5P1/2  F'=1  m_F = -1, 0, +1
    11-15  5P1/2  F'=2  m_F = -2 .. +2

Energies are angular frequencies (rad/s) measured inside each term from its
lower hyperfine level: ground F=1 sits at 0 and F=2 at the ground splitting,
excited F'=1 at 0 and F'=2 at the excited splitting. The optical frequency of
F=1 -> F'=1 is removed by the rotating frame built in ``liouville``.

Dipole normalization: the reduced matrix element of the D1 line is 1, so for
every ground sub-level the squared amplitudes summed over all excited levels
and polarizations equal 1. Amplitudes follow the Condon-Shortley phase
convention:

    amp(g, e, q) = (-1)^(J + I + F' + 1) sqrt((2F + 1)(2J + 1))
                   {J J' 1; F' F I} <F m; 1 q | F' m'>

Usage:
    from src.physics.atomic_structure import build_level_scheme, load_constants

    scheme = build_level_scheme(load_constants())
    scheme.amplitude(1, 11, q=1)
"""

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import constants as sc
from sympy import Rational, S
from sympy.physics.wigner import clebsch_gordan, wigner_6j

from src.types import ExitCode, RelaxError


NUM_LEVELS = 16
NUM_GROUND = 8

# Linear Zeeman regime bound
MAX_FIELD_GAUSS = 1.0

# Bohr magneton over hbar in rad/s per gauss
MU_B_OVER_HBAR = 2 * np.pi * sc.physical_constants["Bohr magneton in Hz/T"][0] * 1e-4

REQUIRED_CONSTANTS = (
    "hyperfine_ground_hz",
    "hyperfine_excited_hz",
    "gamma_natural_hz",
    "gJ_ground",
    "gJ_excited",
    "nuclear_spin",
)

Term = Literal["5S1/2", "5P1/2"]


class LevelSchemeError(RelaxError):
    """Invalid physical-constant set."""
    error_code = ExitCode.VALIDATION_ERROR


class FieldRangeError(RelaxError):
    """Magnetic field outside the linear Zeeman regime."""
    error_code = ExitCode.VALIDATION_ERROR


@dataclass(frozen=True)
class PhysicalConstants:
    """Constant set the level scheme is built from (SI-ish input units)."""
    hyperfine_ground_hz: float = 6.834682610904e9
    hyperfine_excited_hz: float = 816.656e6
    gamma_natural_hz: float = 5.746e6
    gJ_ground: float = 2.00233113
    gJ_excited: float = 0.666
    nuclear_spin: float = 1.5
    wavelength_nm: float = 794.978851156
    mass_amu: float = 86.909180520

    @property
    def mass_kg(self) -> float:
        return self.mass_amu * sc.atomic_mass

    @property
    def wavenumber(self) -> float:
        """Optical wavenumber k in rad/m."""
        return 2 * np.pi / (self.wavelength_nm * 1e-9)


@dataclass(frozen=True)
class Level:
    """One magnetic sub-level."""
    index: int
    term: Term
    F: int
    m: int

    @property
    def is_ground(self) -> bool:
        return self.term == "5S1/2"


@dataclass(frozen=True)
class ReferenceStates:
    """Dark and bright superpositions within ground F=2, as 16-vectors."""
    lam: np.ndarray
    m_state: np.ndarray
    lam_star: np.ndarray


@dataclass(frozen=True, eq=False)
class LevelScheme:
    """The 16 D1 sub-levels with energies, g-factors and dipole couplings.

    Attributes:
        constants: Constant set the scheme was built from
        levels: Levels in canonical order
        energies: Angular-frequency offsets (rad/s), see module docstring
        g_factors: Lande g_F per (term, F)
        gamma: Natural linewidth of 5P1/2 (rad/s)
        amplitudes: Array [q + 1, g, e] of dipole amplitudes (zero unless g ground, e excited)
    """
    constants: PhysicalConstants
    levels: tuple[Level, ...]
    energies: np.ndarray
    g_factors: dict[tuple[str, int], float] = field(repr=False)
    gamma: float
    amplitudes: np.ndarray = field(repr=False)

    @property
    def hyperfine_ground(self) -> float:
        return 2 * np.pi * self.constants.hyperfine_ground_hz

    @property
    def hyperfine_excited(self) -> float:
        return 2 * np.pi * self.constants.hyperfine_excited_hz

    @property
    def ground(self) -> tuple[Level, ...]:
        return self.levels[:NUM_GROUND]

    @property
    def excited(self) -> tuple[Level, ...]:
        return self.levels[NUM_GROUND:]

    def amplitude(self, g: int, e: int, q: int) -> float:
        return float(self.amplitudes[q + 1, g, e])

    def g_factor(self, level: Level) -> float:
        return self.g_factors[(level.term, level.F)]

    def transition_frequency(self, F: int, F_prime: int) -> float:
        """Frequency of F -> F' relative to F=1 -> F'=1 (rad/s)."""
        g = manifold_indices("5S1/2", F)[0]
        e = manifold_indices("5P1/2", F_prime)[0]
        return float(self.energies[e] - self.energies[g])


def load_constants(path: str | Path | None = None) -> PhysicalConstants:
    """Load a constants file, or the shipped D1 reference values.

    Keys starting with an underscore are comments. Missing optional keys
    (wavelength, mass) fall back to the reference values.

    Raises:
        LevelSchemeError: If a required key is missing or not numeric
    """
    if path is None:
        text = resources.files("src.physics").joinpath("data/rb87_d1.json").read_text("utf-8")
        source = "rb87_d1.json"
    else:
        text = Path(path).read_text(encoding="utf-8")
        source = str(path)

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise LevelSchemeError(
            f"Constants file {source} is not valid JSON (line {e.lineno}, column {e.colno})"
        ) from e

    values = {k: v for k, v in raw.items() if not k.startswith("_")}
    missing = [k for k in REQUIRED_CONSTANTS if k not in values]
    if missing:
        raise LevelSchemeError(f"Constants file {source} is missing: {', '.join(missing)}")

    known = set(PhysicalConstants.__dataclass_fields__)
    unknown = sorted(set(values) - known)
    if unknown:
        raise LevelSchemeError(f"Constants file {source} has unknown keys: {', '.join(unknown)}")

    try:
        return PhysicalConstants(**{k: float(v) for k, v in values.items()})
    except (TypeError, ValueError) as e:
        raise LevelSchemeError(f"Constants file {source} has a non-numeric value: {e}") from e


def lande_g_factor(F: float, J: float, I: float, g_J: float) -> float:
    """Hyperfine Lande factor with the nuclear term neglected."""
    if F == 0:
        return 0.0
    return g_J * (F * (F + 1) - I * (I + 1) + J * (J + 1)) / (2 * F * (F + 1))


@lru_cache(maxsize=None)
def _amplitude(F: int, m: int, F_prime: int, m_prime: int, q: int, two_i: int) -> float:
    if m_prime != m + q or abs(F - F_prime) > 1:
        return 0.0
    half = Rational(1, 2)
    nuclear = Rational(two_i, 2)
    six_j = wigner_6j(half, half, 1, S(F_prime), S(F), nuclear)
    cg = clebsch_gordan(S(F), 1, S(F_prime), S(m), S(q), S(m_prime))
    phase = (-1) ** int(half + nuclear + F_prime + 1)
    value = phase * np.sqrt(float((2 * F + 1) * 2)) * float(six_j) * float(cg)
    return float(value)


def dipole_amplitude(g: Level, e: Level, q: int, nuclear_spin: float = 1.5) -> float:
    """Relative dipole amplitude <e| d_q |g> for a ground and an excited level.

    Returns 0 for forbidden transitions (m' != m + q, |F - F'| > 1, |q| > 1).
    """
    if not g.is_ground or e.is_ground:
        raise ValueError("dipole_amplitude expects a ground and an excited level")
    if q not in (-1, 0, 1):
        return 0.0
    return _amplitude(g.F, g.m, e.F, e.m, q, int(round(2 * nuclear_spin)))


def _build_levels() -> tuple[Level, ...]:
    levels: list[Level] = []
    for term in ("5S1/2", "5P1/2"):
        for F in (1, 2):
            for m in range(-F, F + 1):
                levels.append(Level(len(levels), term, F, m))  # type: ignore[arg-type]
    return tuple(levels)


def manifold_indices(term: str, F: int) -> list[int]:
    """Canonical indices of the sub-levels of one hyperfine manifold."""
    if F not in (1, 2) or term not in ("5S1/2", "5P1/2"):
        raise ValueError(f"No manifold {term} F={F}")
    offset = 0 if term == "5S1/2" else NUM_GROUND
    start = offset if F == 1 else offset + 3
    return list(range(start, start + 2 * F + 1))


def build_level_scheme(constants: PhysicalConstants | None = None) -> LevelScheme:
    """Build the immutable 16-level D1 scheme.

    Raises:
        LevelSchemeError: If the linewidth, a splitting or the mass is not positive
    """
    c = constants or PhysicalConstants()
    for name in ("hyperfine_ground_hz", "hyperfine_excited_hz", "gamma_natural_hz",
                 "wavelength_nm", "mass_amu"):
        if not getattr(c, name) > 0:
            raise LevelSchemeError(f"{name} must be positive, got {getattr(c, name)}")
    if c.nuclear_spin != 1.5:
        raise LevelSchemeError("Only the I = 3/2 level structure of 87Rb is supported")

    levels = _build_levels()
    energies = np.zeros(NUM_LEVELS)
    energies[manifold_indices("5S1/2", 2)] = 2 * np.pi * c.hyperfine_ground_hz
    energies[manifold_indices("5P1/2", 2)] = 2 * np.pi * c.hyperfine_excited_hz
    energies.flags.writeable = False

    g_factors = {
        ("5S1/2", 1): lande_g_factor(1, 0.5, c.nuclear_spin, c.gJ_ground),
        ("5S1/2", 2): lande_g_factor(2, 0.5, c.nuclear_spin, c.gJ_ground),
        ("5P1/2", 1): lande_g_factor(1, 0.5, c.nuclear_spin, c.gJ_excited),
        ("5P1/2", 2): lande_g_factor(2, 0.5, c.nuclear_spin, c.gJ_excited),
    }

    amplitudes = np.zeros((3, NUM_LEVELS, NUM_LEVELS))
    for g in levels[:NUM_GROUND]:
        for e in levels[NUM_GROUND:]:
            for q in (-1, 0, 1):
                amplitudes[q + 1, g.index, e.index] = dipole_amplitude(g, e, q, c.nuclear_spin)
    amplitudes.flags.writeable = False

    return LevelScheme(
        constants=c,
        levels=levels,
        energies=energies,
        g_factors=g_factors,
        gamma=2 * np.pi * c.gamma_natural_hz,
        amplitudes=amplitudes,
    )


def check_field(b_z: float) -> None:
    """Raise FieldRangeError outside the linear Zeeman regime."""
    if not np.isfinite(b_z) or abs(b_z) > MAX_FIELD_GAUSS:
        raise FieldRangeError(
            f"|B_z| = {abs(b_z):g} G exceeds the linear Zeeman bound of {MAX_FIELD_GAUSS} G"
        )


def zeeman_shift(level: Level, b_z: float, scheme: LevelScheme) -> float:
    """Linear Zeeman shift g_F mu_B B m_F / hbar in rad/s."""
    check_field(b_z)
    return scheme.g_factor(level) * MU_B_OVER_HBAR * b_z * level.m


def zeeman_shifts(scheme: LevelScheme, b_z: float) -> np.ndarray:
    """Zeeman shifts of all 16 levels."""
    check_field(b_z)
    return np.array([scheme.g_factor(lv) * MU_B_OVER_HBAR * b_z * lv.m for lv in scheme.levels])


def thermal_state(scheme: LevelScheme | None = None) -> np.ndarray:
    """Uniform ground population 1/8, empty excited term, no coherences."""
    rho = np.zeros((NUM_LEVELS, NUM_LEVELS), dtype=complex)
    idx = np.arange(NUM_GROUND)
    rho[idx, idx] = 1.0 / NUM_GROUND
    return rho


def reference_states(scheme: LevelScheme | None = None) -> ReferenceStates:
    """|Lambda>, |M> and |Lambda*> embedded in the 16-level space."""
    f2 = manifold_indices("5S1/2", 2)  # m = -2, -1, 0, 1, 2

    def embed(coeffs: list[float]) -> np.ndarray:
        v = np.zeros(NUM_LEVELS, dtype=complex)
        v[f2] = coeffs
        return v / np.linalg.norm(v)

    return ReferenceStates(
        lam=embed([0, 1, 0, 1, 0]),
        m_state=embed([1, 0, np.sqrt(6), 0, 1]),
        lam_star=embed([0, 1, 0, -1, 0]),
    )


__all__ = [
    "NUM_LEVELS",
    "NUM_GROUND",
    "MU_B_OVER_HBAR",
    "LevelSchemeError",
    "FieldRangeError",
    "PhysicalConstants",
    "Level",
    "LevelScheme",
    "ReferenceStates",
    "load_constants",
    "lande_g_factor",
    "dipole_amplitude",
    "manifold_indices",
    "build_level_scheme",
    "check_field",
    "zeeman_shift",
    "zeeman_shifts",
    "thermal_state",
    "reference_states",
]
