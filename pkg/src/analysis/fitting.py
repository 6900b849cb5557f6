"""Least-squares fitting of decay traces.

The engine is a damped Gauss-Newton (Levenberg-Marquardt) iteration with
Marquardt diagonal scaling and a fixed damping schedule:

    lambda_0 = 1e-3, x10 on a rejected step, /10 on an accepted step
    stop: relative cost change < 1e-10, scaled gradient < 1e-8, or 200 iterations

Uncertainties come from the linearized covariance at the optimum scaled by
the residual variance. Non-convergence is a flag on FitResult, never an
exception.
"""

from dataclasses import dataclass, replace

import numpy as np

from src.analysis.models import DecayModel, InitializationError, get_model
from src.types import DecayTrace, ExitCode, FitResult, RelaxError


MIN_SAMPLES = 8

# Reported double-exponential rates closer than this ratio are unidentifiable
RATE_COLLAPSE_RATIO = 1.5

# Scaled normal-matrix condition number above which the covariance is singular
MAX_CONDITION = 1e14


class FitInputError(RelaxError):
    """Trace or regression input that cannot be fitted at all."""
    error_code = ExitCode.VALIDATION_ERROR


@dataclass(frozen=True)
class FitOptions:
    """Damping schedule and stopping criteria."""
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_min: float = 1e-12
    lambda_max: float = 1e16
    ftol: float = 1e-10
    gtol: float = 1e-8
    stall_gtol: float = 1e-6
    max_iterations: int = 200


@dataclass(frozen=True)
class LinearFit:
    """Weighted straight-line fit y = slope x + intercept.

    Attributes:
        slope: Fitted slope
        intercept: Fitted intercept
        covariance: 2x2 covariance of (slope, intercept), scaled by the reduced chi^2
        r_squared: Weighted coefficient of determination
    """
    slope: float
    intercept: float
    covariance: np.ndarray
    r_squared: float


def _gradient_measure(jac: np.ndarray, r: np.ndarray) -> float:
    """max_j |J_j . r| / (|J_j| |r|), the cosine between residual and Jacobian columns."""
    r_norm = float(np.linalg.norm(r))
    if r_norm == 0:
        return 0.0
    col_norms = np.linalg.norm(jac, axis=0)
    col_norms[col_norms == 0] = 1.0
    return float(np.max(np.abs(jac.T @ r) / (col_norms * r_norm)))


def _covariance(jac: np.ndarray, cost: float, n: int) -> np.ndarray | None:
    a = jac.T @ jac
    d = np.sqrt(np.diag(a))
    if not np.all(np.isfinite(a)) or np.any(d == 0):
        return None
    scaled = a / np.outer(d, d)
    try:
        if np.linalg.cond(scaled) > MAX_CONDITION:
            return None
        inv = np.linalg.inv(scaled) / np.outer(d, d)
    except np.linalg.LinAlgError:
        return None
    k = jac.shape[1]
    s2 = 2.0 * cost / (n - k) if n > k else 0.0
    return s2 * inv


def _failed(model: DecayModel, message: str, iterations: int = 0) -> FitResult:
    k = len(model.param_names)
    return FitResult(
        model=model.name,
        names=model.param_names,
        params=np.full(k, np.nan),
        errors=np.full(k, np.nan),
        rms_residual=float("nan"),
        converged=False,
        iterations=iterations,
        gradient_norm=float("nan"),
        message=message,
    )


def levenberg_marquardt(
    model: DecayModel,
    t: np.ndarray,
    y: np.ndarray,
    p0: np.ndarray,
    options: FitOptions | None = None,
) -> FitResult:
    """Minimize |y - model(t, p)|^2 from p0."""
    opts = options or FitOptions()
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(t)
    p = np.asarray(p0, dtype=float).copy()
    r = y - model.evaluate(t, p)
    cost = 0.5 * float(r @ r)
    if not np.isfinite(cost):
        return _failed(model, "Initial guess gives a non-finite residual")

    exact = (1e-14 * max(float(np.max(np.abs(y))), 1e-300)) ** 2 * n
    lam = opts.lambda0
    stopped = False
    message = "iteration cap reached"
    grad = float("inf")
    iteration = 0

    for iteration in range(1, opts.max_iterations + 1):
        jac = model.jacobian(t, p)
        if not np.all(np.isfinite(jac)):
            message = "non-finite Jacobian"
            break
        grad = _gradient_measure(jac, r)
        if 2 * cost <= exact:
            stopped, message = True, "exact fit"
            break
        if grad < opts.gtol:
            stopped, message = True, "gradient below tolerance"
            break

        a = jac.T @ jac
        g = jac.T @ r
        diag = np.diag(a).copy()
        diag[diag == 0] = 1.0

        accepted = False
        while lam <= opts.lambda_max:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= opts.lambda_up
                continue
            p_new = p + step
            r_new = y - model.evaluate(t, p_new)
            cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam *= opts.lambda_up

        if not accepted:
            stopped = grad < opts.stall_gtol
            message = "no downhill step at maximum damping"
            break

        rel = (cost - cost_new) / max(cost, 1e-300)
        p, r, cost = p_new, r_new, cost_new
        lam = max(lam / opts.lambda_down, opts.lambda_min)
        if rel < opts.ftol:
            stopped, message = True, "relative cost change below tolerance"
            jac = model.jacobian(t, p)
            grad = _gradient_measure(jac, r)
            break

    jac = model.jacobian(t, p)
    cov = _covariance(jac, cost, n)
    if cov is None:
        errors = np.full(len(p), np.nan)
        converged = False
        message = f"singular Jacobian at the optimum ({message})"
    else:
        errors = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        converged = stopped

    p, errors = model.canonicalize(p, errors)
    return FitResult(
        model=model.name,
        names=model.param_names,
        params=p,
        errors=errors,
        rms_residual=float(np.sqrt(2 * cost / n)),
        converged=bool(converged),
        iterations=iteration,
        gradient_norm=grad,
        message=message,
    )


def _trace_data(trace: DecayTrace, use_raw: bool) -> tuple[np.ndarray, np.ndarray]:
    start = trace.meta_float("fit_start_s")
    if start is not None:
        trace = trace.window(start)
    if len(trace) < MIN_SAMPLES:
        raise FitInputError(f"Need at least {MIN_SAMPLES} samples to fit, got {len(trace)}")
    y = trace.alpha_raw if use_raw else trace.alpha_norm
    if not np.all(np.isfinite(y)):
        raise FitInputError("Trace contains non-finite values")
    return trace.times, y


def fit_model(
    model: DecayModel,
    trace: DecayTrace,
    *,
    use_raw: bool = False,
    options: FitOptions | None = None,
) -> FitResult:
    """Initialize from the data and run the least-squares iteration.

    Raises:
        FitInputError: Fewer than 8 samples or non-finite data
    """
    t, y = _trace_data(trace, use_raw)
    try:
        p0 = model.initial_guess(t, y)
    except InitializationError as e:
        return _failed(model, str(e))
    return levenberg_marquardt(model, t, y, p0, options)


def fit_exponential(
    trace: DecayTrace, *, use_raw: bool = False, options: FitOptions | None = None
) -> FitResult:
    """y = A exp(-gamma t) + C."""
    return fit_model(get_model("exponential"), trace, use_raw=use_raw, options=options)


def fit_double_exponential(
    trace: DecayTrace, *, use_raw: bool = False, options: FitOptions | None = None
) -> FitResult:
    """y = A1 exp(-gamma1 t) + A2 exp(-gamma2 t) + C with gamma1 > gamma2.

    A converged fit whose rates end up closer than 1.5x is flagged as
    unidentifiable.
    """
    result = fit_model(get_model("double_exponential"), trace, use_raw=use_raw, options=options)
    g1, g2 = result.param("gamma1"), result.param("gamma2")
    if result.converged and not (g2 > 0 and g1 / g2 >= RATE_COLLAPSE_RATIO):
        return replace(
            result,
            converged=False,
            message=f"rates collapsed (gamma1/gamma2 = {g1 / g2 if g2 else float('inf'):.3g})",
        )
    return result


def fit_decaying_sinusoid(
    trace: DecayTrace, *, use_raw: bool = False, options: FitOptions | None = None
) -> FitResult:
    """y = A exp(-gamma t) sin(omega t + phi) + C; gamma is the Zeeman decoherence rate."""
    return fit_model(get_model("decaying_sinusoid"), trace, use_raw=use_raw, options=options)


_FITTERS = {
    "exponential": fit_exponential,
    "double_exponential": fit_double_exponential,
    "decaying_sinusoid": fit_decaying_sinusoid,
}


def model_for_trace(trace: DecayTrace) -> str:
    """Default model for a trace from its metadata."""
    explicit = trace.metadata.get("fit_model")
    if explicit:
        return explicit
    protocol = trace.protocol
    if protocol == "B":
        return "double_exponential"
    if protocol.startswith("C") and (trace.meta_float("b_z_gauss", 0.0) or 0.0) != 0.0:
        return "decaying_sinusoid"
    return "exponential"


def fit_trace(
    trace: DecayTrace,
    model: str | None = None,
    *,
    use_raw: bool = False,
    options: FitOptions | None = None,
) -> FitResult:
    """Fit with an explicit model or the one implied by the trace's protocol."""
    name = model or model_for_trace(trace)
    if name not in _FITTERS:
        raise FitInputError(f"Unknown fit model: {name}. Supported: {list(_FITTERS.keys())}")
    return _FITTERS[name](trace, use_raw=use_raw, options=options)


def linear_fit(
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
) -> LinearFit:
    """Closed-form weighted least squares for a straight line.

    Raises:
        FitInputError: Fewer than 2 points or all x equal
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    if len(x) < 2 or len(y) != len(x) or len(w) != len(x):
        raise FitInputError("Linear fit needs at least 2 points of matching length")
    if np.ptp(x) <= 1e-15 * max(float(np.max(np.abs(x))), 1e-300):
        raise FitInputError("Linear fit is degenerate: all x values are equal")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise FitInputError("Weights must be finite and non-negative")

    # Center x for conditioning
    x0 = float(np.average(x, weights=w))
    design = np.column_stack([x - x0, np.ones_like(x)])
    normal = design.T @ (w[:, None] * design)
    beta = np.linalg.solve(normal, design.T @ (w * y))
    resid = y - design @ beta
    n = len(x)
    s2 = float(np.sum(w * resid**2)) / (n - 2) if n > 2 else 0.0
    cov_c = s2 * np.linalg.inv(normal)

    slope = float(beta[0])
    intercept = float(beta[1] - slope * x0)
    # Back to (slope, intercept) at x = 0
    jac = np.array([[1.0, 0.0], [-x0, 1.0]])
    covariance = jac @ cov_c @ jac.T

    y_mean = float(np.average(y, weights=w))
    ss_tot = float(np.sum(w * (y - y_mean) ** 2))
    r_squared = 1.0 - float(np.sum(w * resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(slope, intercept, covariance, r_squared)


def normalize_trace(
    alpha: np.ndarray,
    alpha_ss: float,
    alpha_ini: float,
    tolerance: float = 1e-9,
) -> np.ndarray:
    """(alpha - alpha_ss) / (alpha_ini - alpha_ss).

    Raises:
        FitInputError: If alpha_ini and alpha_ss are indistinguishable
    """
    denom = alpha_ini - alpha_ss
    scale = max(abs(alpha_ss), abs(alpha_ini), 1e-300)
    if abs(denom) <= tolerance * scale:
        raise FitInputError(
            f"Cannot normalize: alpha_ini ({alpha_ini:.6g}) equals alpha_ss ({alpha_ss:.6g})"
        )
    return (np.asarray(alpha, dtype=float) - alpha_ss) / denom


def add_noise(trace: DecayTrace, fraction: float, seed: int) -> DecayTrace:
    """Copy of the trace with Gaussian noise of ``fraction`` times the normalized amplitude.

    The raw series receives the same noise mapped through the normalization
    when alpha_ss and alpha_ini are known.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(len(trace))
    scale = float(np.max(np.abs(trace.alpha_norm))) if len(trace) else 0.0
    norm = trace.alpha_norm + fraction * scale * z

    a_ss = trace.meta_float("alpha_ss")
    a_ini = trace.meta_float("alpha_ini")
    if a_ss is not None and a_ini is not None:
        raw = a_ss + (a_ini - a_ss) * norm
    else:
        raw_scale = float(np.max(np.abs(trace.alpha_raw))) if len(trace) else 0.0
        raw = trace.alpha_raw + fraction * raw_scale * z

    metadata = dict(trace.metadata)
    metadata["noise_fraction"] = repr(fraction)
    metadata["noise_seed"] = str(seed)
    return DecayTrace(trace.times.copy(), raw, norm, metadata, trace.populations)


__all__ = [
    "MIN_SAMPLES",
    "FitInputError",
    "FitOptions",
    "LinearFit",
    "levenberg_marquardt",
    "fit_model",
    "fit_exponential",
    "fit_double_exponential",
    "fit_decaying_sinusoid",
    "model_for_trace",
    "fit_trace",
    "linear_fit",
    "normalize_trace",
    "add_noise",
]
