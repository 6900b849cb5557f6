"""Data files for plotting.

Writes, into <output>/figures:

    hyperfine_decay.csv (+ _populations)         protocol A dark trace
    zeeman_population_decay.csv (+ _populations) protocol B dark trace, ground sub-levels
    decay_comparison.csv                         fitted A and B rates side by side
    ramsey_zero_field.csv, ramsey_delay_1.csv, ramsey_delay_2.csv
    decoherence_subtracted.csv, decoherence_fit.csv
    dark_state_block.csv                         normalized F=2 block of the pumped state
    summary.csv                                  dark-state weights, frequencies, harmonic ratio,
                                                 diffusion estimate
    rates_vs_density.csv / .json                 unless the sweep is skipped

No images are rendered.
"""

import asyncio
import math
from pathlib import Path

import numpy as np

from src.analysis.models import get_model
from src.analysis.rates import derive_rates
from src.commands.common import (
    PointResult,
    SweepPoint,
    rate_points,
    resolve_density,
    run_point,
    sweep_points,
)
from src.commands.sweep import run_points, show_rates
from src.physics.atomic_structure import build_level_scheme, load_constants, manifold_indices
from src.physics.protocols import (
    dark_state_weights,
    harmonic_ratio,
    make_engine,
    oscillation_frequency_prediction,
)
from src.physics.vapor import estimate_diffusion_rate, temperature_from_density
from src.types import ExitCode, FitResult, RelaxError, RunConfig
from src.utils.config import experiment_for_protocol, save_config
from src.utils.logger import get_logger
from src.utils.reports import write_rates_report
from src.utils.tracefile import GROUND_LABELS, write_populations_csv, write_table_csv, write_trace_csv
from src.utils.validation import validate_output_dir


FIGURE_DIR = "figures"


def _fit_columns(fit: FitResult | None) -> list[float]:
    if fit is None:
        return [math.nan] * 3
    if fit.model == "double_exponential":
        return [fit.param("gamma1"), fit.param("gamma2"), fit.error("gamma2")]
    return [fit.param("gamma"), math.nan, fit.error("gamma")]


def write_dark_decays(a: PointResult, b: PointResult, directory: Path) -> list[Path]:
    paths = []
    for res, stem in ((a, "hyperfine_decay"), (b, "zeeman_population_decay")):
        trace = res.run.traces["dark"]
        paths.append(write_trace_csv(trace, directory / f"{stem}.csv"))
        if trace.populations is not None:
            paths.append(write_populations_csv(trace, directory / f"{stem}_populations.csv"))
    paths.append(write_table_csv(
        directory / "decay_comparison.csv",
        ("protocol", "gamma_per_s", "gamma_slow_per_s", "gamma_err_per_s"),
        [(res.point.protocol, *_fit_columns(res.fit)) for res in (a, b)],
    ))
    return paths


def write_ramsey(c: PointResult, directory: Path) -> list[Path]:
    paths = [
        write_trace_csv(c.run.traces[key], directory / f"ramsey_{key}.csv")
        for key in ("zero_field", "delay_1", "delay_2")
    ]
    subtracted = c.run.traces["subtracted"]
    paths.append(write_trace_csv(subtracted, directory / "decoherence_subtracted.csv"))
    if c.fit is not None and c.fit.converged:
        window = subtracted.window(subtracted.meta_float("fit_start_s", 0.0) or 0.0)
        model = get_model(c.fit.model)
        curve = model.evaluate(window.times, c.fit.params)
        paths.append(write_table_csv(
            directory / "decoherence_fit.csv",
            ("time_s", "alpha_norm", "model"),
            [(float(t), float(y), float(m)) for t, y, m in zip(window.times, window.alpha_norm, curve)],
            {"model": c.fit.model, **{n: repr(float(p)) for n, p in zip(c.fit.names, c.fit.params)}},
        ))
    return paths


def write_dark_state(c: PointResult, directory: Path) -> tuple[Path, dict[str, float]]:
    f2 = manifold_indices("5S1/2", 2)
    rho = c.run.steady_state
    block = rho[np.ix_(f2, f2)] / np.trace(rho[np.ix_(f2, f2)]).real
    labels = GROUND_LABELS[3:]
    rows = [
        (labels[i], labels[j], float(block[i, j].real), float(block[i, j].imag))
        for i in range(len(f2))
        for j in range(len(f2))
    ]
    path = write_table_csv(directory / "dark_state_block.csv", ("row", "column", "re", "im"), rows)
    weights = dark_state_weights(rho)
    return path, {
        "weight_lambda": weights.lam,
        "weight_m": weights.m_state,
        "weight_lambda_star": weights.lam_star,
        "dark_subspace_residual": weights.residual,
        "f2_population": weights.f2_population,
    }


def execute_figures(
    config: RunConfig,
    *,
    density_cm3: float | None = None,
    sweep: bool = True,
    m_state: bool = False,
) -> int:
    """Produce the plotting data at one density, plus the rates sweep."""
    logger = get_logger()
    directory = Path(config.output.directory) / FIGURE_DIR

    try:
        # Step 1: Validate output directory
        output_result = validate_output_dir(str(directory), config.output.overwrite)
        if not output_result.valid:
            logger.error(output_result.error or "Invalid output directory")
            return output_result.error_code or ExitCode.IO_ERROR
        directory.mkdir(parents=True, exist_ok=True)

        # Step 2: One run per protocol at the reference density
        density = resolve_density(config, density_cm3)
        temperature = config.experiment.cell.temperature_k or temperature_from_density(density)
        b_field = config.experiment.ramsey.b_field_gauss
        results: dict[str, PointResult] = {}
        for protocol in ("A", "B", "C"):
            point = SweepPoint(protocol, density, b_field if protocol == "C" else 0.0, temperature)
            with logger.spinner(f"Protocol {protocol} at n = {density:.3e} cm^-3..."):
                results[protocol] = run_point(point, config)
            logger.success(f"Protocol {protocol} recorded")

        # Step 3: Write traces and tables
        write_dark_decays(results["A"], results["B"], directory)
        write_ramsey(results["C"], directory)
        _, summary = write_dark_state(results["C"], directory)

        scheme = build_level_scheme(load_constants(config.constants_file))
        omega, _ = oscillation_frequency_prediction(b_field, scheme)
        summary["predicted_omega_rad_s"] = omega
        c_fit = results["C"].fit
        summary["fitted_omega_rad_s"] = c_fit.param("omega") if c_fit is not None else math.nan
        subtracted = results["C"].run.traces["subtracted"]
        start = subtracted.meta_float("fit_start_s", 0.0) or 0.0
        try:
            summary["harmonic_ratio"] = harmonic_ratio(subtracted.window(start), omega)
        except ValueError as e:
            logger.warning(f"Harmonic ratio not computed: {e}")
            summary["harmonic_ratio"] = math.nan
        cell = config.experiment.cell
        if cell.buffer_pressure_torr > 0:
            summary["diffusion_rate_per_s"] = estimate_diffusion_rate(
                cell.radius_cm, cell.length_cm, cell.buffer_pressure_torr, temperature_k=temperature
            )
        if m_state:
            engine = make_engine(
                experiment_for_protocol(config.experiment, "C"), config.numerics,
                density_cm3=density, temperature_k=temperature, constants_file=config.constants_file,
            )
            with logger.spinner("M-state contribution..."):
                summary["m_state_fraction"] = engine.m_state_contribution(results["C"].run.steady_state)
        write_table_csv(
            directory / "summary.csv",
            ("quantity", "value"),
            [(key, float(value)) for key, value in summary.items()],
            {"density_cm3": repr(density), "b_z_gauss": repr(b_field)},
        )
        logger.box("Pumped state (protocol C)", [f"{k} = {v:.4g}" for k, v in summary.items()])

        # Step 4: Rates versus density
        if sweep:
            points = sweep_points(config)
            logger.info(f"Rates sweep over {len(points)} runs")
            sweep_results = asyncio.run(run_points(points, config))
            rates = derive_rates(rate_points(sweep_results))
            write_rates_report(directory, rates, stem="rates_vs_density")
            show_rates(rates)

        save_config(config, directory / "config.json")
        logger.success(f"Figure data written to {directory}")
        return ExitCode.SUCCESS

    except RelaxError as e:
        logger.error(str(e))
        return e.error_code
    except KeyboardInterrupt:
        logger.warning("\nOperation cancelled by user")
        return ExitCode.INTERRUPT


__all__ = ["execute_figures", "FIGURE_DIR"]
