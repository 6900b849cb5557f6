"""Decay models for trace fitting.

Each model provides its value, analytic Jacobian and a data-driven
initial guess. The fitting engine in ``fitting`` is model-agnostic.
"""

from abc import ABC, abstractmethod

import numpy as np

from src.types import ExitCode, RelaxError


# A log-linear or spectral initializer ignores samples below this fraction of the peak
_SIGNAL_FLOOR = 0.05

# Spectral peak must exceed the median spectrum by this factor
PEAK_TO_FLOOR = 5.0

# Zero padding of the initial spectrum
_PAD_FACTOR = 16


class InitializationError(RelaxError):
    """The initializer found nothing to fit (flat trace, no spectral peak)."""
    error_code = ExitCode.CONVERGENCE_ERROR


class DecayModel(ABC):
    """Abstract base class for fit models."""

    @property
    @abstractmethod
    def name(self) -> str:
        """Model tag."""
        pass

    @property
    @abstractmethod
    def param_names(self) -> tuple[str, ...]:
        """Parameter names in vector order."""
        pass

    @abstractmethod
    def evaluate(self, t: np.ndarray, p: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def jacobian(self, t: np.ndarray, p: np.ndarray) -> np.ndarray:
        """d model / d p, shape (len(t), len(p))."""
        pass

    @abstractmethod
    def initial_guess(self, t: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Starting point for the least-squares iteration.

        Raises:
            InitializationError: If the data carry no usable signal
        """
        pass

    def canonicalize(self, p: np.ndarray, errors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map equivalent parameter vectors to one reported form."""
        return p, errors


def _check_signal(y: np.ndarray) -> None:
    span = float(np.ptp(y)) if y.size else 0.0
    if span <= 1e-12 * max(1.0, float(np.max(np.abs(y))) if y.size else 1.0):
        raise InitializationError("Trace is flat; no decay to fit")


def _log_linear_rate(t: np.ndarray, d: np.ndarray) -> tuple[float, float]:
    """Rate and amplitude of |d| ~ A exp(-gamma t) from a log-linear fit."""
    sign = 1.0 if d[np.argmax(np.abs(d))] >= 0 else -1.0
    mag = sign * d
    mask = mag > _SIGNAL_FLOOR * float(np.max(mag))
    if mask.sum() < 2:
        raise InitializationError("Too few samples above the noise to estimate a rate")
    slope, intercept = np.polyfit(t[mask], np.log(mag[mask]), 1)
    span = float(t[-1] - t[0])
    gamma = max(-float(slope), 0.1 / span if span > 0 else 1.0)
    return gamma, sign * float(np.exp(intercept))


class ExponentialModel(DecayModel):
    """y = A exp(-gamma t) + C."""

    @property
    def name(self) -> str:
        return "exponential"

    @property
    def param_names(self) -> tuple[str, ...]:
        return ("A", "gamma", "C")

    def evaluate(self, t: np.ndarray, p: np.ndarray) -> np.ndarray:
        a, g, c = p
        return a * np.exp(-g * t) + c

    def jacobian(self, t: np.ndarray, p: np.ndarray) -> np.ndarray:
        a, g, _ = p
        e = np.exp(-g * t)
        return np.column_stack([e, -a * t * e, np.ones_like(t)])

    def initial_guess(self, t: np.ndarray, y: np.ndarray) -> np.ndarray:
        _check_signal(y)
        tail = max(2, len(y) // 10)
        c = float(np.mean(y[-tail:]))
        gamma, _ = _log_linear_rate(t, y - c)
        a = float(y[0] - c) * float(np.exp(gamma * t[0]))
        return np.array([a, gamma, c])


class DoubleExponentialModel(DecayModel):
    """y = A1 exp(-gamma1 t) + A2 exp(-gamma2 t) + C, reported with gamma1 > gamma2.

    Identifiable when the two rates differ by roughly 3x or more.
    """

    @property
    def name(self) -> str:
        return "double_exponential"

    @property
    def param_names(self) -> tuple[str, ...]:
        return ("A1", "gamma1", "A2", "gamma2", "C")

    def evaluate(self, t: np.ndarray, p: np.ndarray) -> np.ndarray:
        a1, g1, a2, g2, c = p
        return a1 * np.exp(-g1 * t) + a2 * np.exp(-g2 * t) + c

    def jacobian(self, t: np.ndarray, p: np.ndarray) -> np.ndarray:
        a1, g1, a2, g2, _ = p
        e1 = np.exp(-g1 * t)
        e2 = np.exp(-g2 * t)
        return np.column_stack([e1, -a1 * t * e1, e2, -a2 * t * e2, np.ones_like(t)])

    def initial_guess(self, t: np.ndarray, y: np.ndarray) -> np.ndarray:
        # Peel: slow tail first, then the fast remainder
        _check_signal(y)
        single = ExponentialModel()
        half = len(t) // 2
        t_tail, y_tail = t[half:], y[half:]
        try:
            a2, g2, c = single.initial_guess(t_tail, y_tail)
        except InitializationError:
            a2, g2, c = 0.0, 1.0 / max(float(t[-1] - t[0]), 1e-12), float(np.mean(y_tail))

        rest = y - a2 * np.exp(-g2 * t) - c
        head = t <= t[half]
        try:
            g1, a1 = _log_linear_rate(t[head], rest[head])
        except InitializationError:
            g1, a1 = 3.0 * g2, float(rest[0])
        if g1 <= 1.5 * g2:
            g1 = 3.0 * g2
        return np.array([a1, g1, a2, g2, c])

    def canonicalize(self, p: np.ndarray, errors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a1, g1, a2, g2, _ = p
        swap = g1 < g2 or (g1 == g2 and a1 > a2)
        if swap:
            order = [2, 3, 0, 1, 4]
            return p[order], errors[order]
        return p, errors


class DecayingSinusoidModel(DecayModel):
    """y = A exp(-gamma t) sin(omega t + phi) + C, with A >= 0 and phi in (-pi, pi]."""

    @property
    def name(self) -> str:
        return "decaying_sinusoid"

    @property
    def param_names(self) -> tuple[str, ...]:
        return ("A", "gamma", "omega", "phi", "C")

    def evaluate(self, t: np.ndarray, p: np.ndarray) -> np.ndarray:
        a, g, w, phi, c = p
        return a * np.exp(-g * t) * np.sin(w * t + phi) + c

    def jacobian(self, t: np.ndarray, p: np.ndarray) -> np.ndarray:
        a, g, w, phi, _ = p
        e = np.exp(-g * t)
        s = np.sin(w * t + phi)
        co = np.cos(w * t + phi)
        return np.column_stack([e * s, -a * t * e * s, a * t * e * co, a * e * co, np.ones_like(t)])

    def initial_guess(self, t: np.ndarray, y: np.ndarray) -> np.ndarray:
        _check_signal(y)
        n = len(t)
        c = float(np.mean(y))
        d = y - c
        dt = float(np.median(np.diff(t)))
        span = float(t[-1] - t[0])

        n_fft = _PAD_FACTOR * (1 << int(np.ceil(np.log2(n))))
        spectrum = np.abs(np.fft.rfft(d, n_fft))
        freqs = np.fft.rfftfreq(n_fft, dt)
        usable = freqs >= 1.0 / span
        if not usable.any():
            raise InitializationError("Trace too short for a spectral estimate")
        floor = float(np.median(spectrum[usable]))
        k = int(np.argmax(np.where(usable, spectrum, 0.0)))
        if spectrum[k] <= 0 or spectrum[k] < PEAK_TO_FLOOR * floor:
            raise InitializationError("No spectral peak above the noise floor")

        # Parabolic refinement of the padded peak
        f_peak = freqs[k]
        if 0 < k < len(spectrum) - 1:
            left, mid, right = spectrum[k - 1], spectrum[k], spectrum[k + 1]
            denom = left - 2 * mid + right
            if denom != 0:
                f_peak += 0.5 * (left - right) / denom * (freqs[1] - freqs[0])
        omega = 2 * np.pi * f_peak

        def quadrature(sel: np.ndarray) -> tuple[float, float]:
            s = 2.0 / sel.sum() * float(np.sum(d[sel] * np.sin(omega * t[sel])))
            co = 2.0 / sel.sum() * float(np.sum(d[sel] * np.cos(omega * t[sel])))
            return float(np.hypot(s, co)), float(np.arctan2(co, s))

        first = t <= t[0] + span / 2
        second = ~first
        amp1, phi = quadrature(first)
        gamma = 0.0
        if second.sum() >= 4:
            amp2, _ = quadrature(second)
            if amp2 > 0 and amp1 > amp2:
                gamma = np.log(amp1 / amp2) / (float(np.mean(t[second])) - float(np.mean(t[first])))
        amp0 = amp1 * float(np.exp(gamma * float(np.mean(t[first]))))
        return np.array([amp0, gamma, omega, phi, c])

    def canonicalize(self, p: np.ndarray, errors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = p.copy()
        if p[0] < 0:
            p[0] = -p[0]
            p[3] += np.pi
        if p[2] < 0:
            p[2] = -p[2]
            p[3] = np.pi - p[3]
        p[3] = float(np.pi - np.mod(np.pi - p[3], 2 * np.pi))
        return p, errors


MODELS: dict[str, type[DecayModel]] = {
    "exponential": ExponentialModel,
    "double_exponential": DoubleExponentialModel,
    "decaying_sinusoid": DecayingSinusoidModel,
}


def get_model(name: str) -> DecayModel:
    """Factory function to get a model instance.

    Raises:
        ValueError: If the model is not supported
    """
    if name not in MODELS:
        raise ValueError(f"Unknown fit model: {name}. Supported: {list(MODELS.keys())}")
    return MODELS[name]()


__all__ = [
    "InitializationError",
    "DecayModel",
    "ExponentialModel",
    "DoubleExponentialModel",
    "DecayingSinusoidModel",
    "MODELS",
    "get_model",
]
