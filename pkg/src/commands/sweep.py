"""Density sweep over protocols, fits and the exchange cross-section.

Workflow Steps:
    1. Validate output directory
    2. Expand the sweep into points (protocol x density x field)
    3. Run the points, in worker processes when numerics.workers > 1
    4. Merge results in point order and write traces
    5. Write the fit report and the rates-versus-density report

Results are merged by point key, never by completion order, so the output
files do not depend on the worker count.

Usage:
    from src.commands.sweep import execute_sweep

    exit_code = execute_sweep(config)
"""

import asyncio
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from src.analysis.rates import derive_rates
from src.commands.common import (
    PointResult,
    SweepPoint,
    fit_entries,
    format_rate,
    rate_points,
    run_point,
    sweep_points,
    write_run_traces,
)
from src.types import DerivedRates, ExitCode, RelaxError, RunConfig
from src.utils.config import save_config
from src.utils.logger import get_logger
from src.utils.reports import write_fit_report, write_rates_report
from src.utils.validation import validate_output_dir


def execute_sweep(config: RunConfig) -> int:
    """Run every sweep point and derive the rates.

    Returns:
        Exit code; CONVERGENCE_ERROR if any fit failed (all outputs are still written)
    """
    return asyncio.run(_execute_sweep_async(config))


async def run_points(points: list[SweepPoint], config: RunConfig) -> list[PointResult]:
    """Run points concurrently and return results sorted by point."""
    logger = get_logger()
    workers = min(config.numerics.workers, len(points)) if points else 1
    loop = asyncio.get_running_loop()
    results: list[PointResult] = []

    with logger.progress(len(points), "Sweep") as progress:
        if workers <= 1:
            for point in points:
                results.append(await loop.run_in_executor(None, run_point, point, config))
                logger.debug(f"Finished {point.label}")
                progress.advance(progress.task_id)
        else:
            logger.debug(f"Running {len(points)} points on {workers} worker processes")
            with ProcessPoolExecutor(max_workers=workers) as executor:
                futures = [loop.run_in_executor(executor, run_point, p, config) for p in points]
                for future in asyncio.as_completed(futures):
                    results.append(await future)
                    progress.advance(progress.task_id)

    return sorted(results, key=lambda r: r.point)


def write_sweep_outputs(results: list[PointResult], config: RunConfig, output_dir: Path) -> DerivedRates:
    """Traces, fit report, rates report and resolved config."""
    output_dir.mkdir(parents=True, exist_ok=True)
    for res in results:
        write_run_traces(res.run, output_dir, res.point.label)
    write_fit_report(output_dir / "sweep_fits.json", fit_entries(results))
    rates = derive_rates(rate_points(results))
    write_rates_report(output_dir, rates)
    save_config(config, output_dir / "config.json")
    return rates


def show_rates(rates: DerivedRates) -> None:
    logger = get_logger()
    rows = [
        [
            f"{row.density_cm3:.2e}",
            format_rate(row.hyperfine, row.hyperfine_err),
            format_rate(row.zeeman_population, row.zeeman_population_err),
            format_rate(row.decoherence, row.decoherence_err),
        ]
        for row in rates.rows
    ]
    logger.table(
        "Decay rates (s^-1)",
        ["n (cm^-3)", "hyperfine", "Zeeman population", "Zeeman decoherence"],
        rows,
    )
    if math.isfinite(rates.cross_section_cm2):
        logger.info(
            f"Spin-exchange cross-section: ({rates.cross_section_cm2 * 1e14:.3f} ± "
            f"{rates.cross_section_err_cm2 * 1e14:.3f}) x 10^-14 cm^2"
        )


async def _execute_sweep_async(config: RunConfig) -> int:
    logger = get_logger()
    output_dir = Path(config.output.directory)

    try:
        # Step 1: Validate output directory
        output_result = validate_output_dir(str(output_dir), config.output.overwrite)
        if not output_result.valid:
            logger.error(output_result.error or "Invalid output directory")
            return output_result.error_code or ExitCode.IO_ERROR

        # Step 2: Expand points
        points = sweep_points(config)
        logger.info(f"Sweep of {len(points)} runs ({', '.join(config.sweep.protocols)})")

        # Step 3: Run
        results = await run_points(points, config)

        # Step 4-5: Write outputs
        rates = write_sweep_outputs(results, config, output_dir)
        show_rates(rates)

        failed = [r for r in results if r.fit is not None and not r.fit.converged]
        for res in failed:
            logger.error(f"Fit failed for {res.point.label}: {res.fit.message}")  # type: ignore[union-attr]
        if failed:
            return ExitCode.CONVERGENCE_ERROR

        logger.success(f"Sweep complete. Outputs in {output_dir}")
        return ExitCode.SUCCESS

    except RelaxError as e:
        logger.error(str(e))
        return e.error_code
    except KeyboardInterrupt:
        logger.warning("\nOperation cancelled by user")
        return ExitCode.INTERRUPT


__all__ = ["execute_sweep", "run_points", "write_sweep_outputs", "show_rates"]
