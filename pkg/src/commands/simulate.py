"""Single protocol run.

Workflow Steps:
    1. Validate output directory
    2. Resolve density and temperature
    3. Pump to steady state and record the protocol traces
    4. Write traces and the resolved config
    5. Fit the rate-carrying trace and write the fit report

Usage:
    from src.commands.simulate import execute_simulate

    exit_code = execute_simulate(config, density_cm3=3.8e11)
"""

from pathlib import Path

from src.analysis.fitting import fit_trace
from src.commands.common import (
    FIT_TRACE,
    PointResult,
    SweepPoint,
    fit_entries,
    resolve_density,
    run_point,
    write_run_traces,
)
from src.physics.vapor import temperature_from_density
from src.types import ExitCode, RelaxError, RunConfig
from src.utils.config import save_config
from src.utils.logger import get_logger
from src.utils.reports import write_fit_report
from src.utils.validation import validate_density, validate_output_dir


def execute_simulate(
    config: RunConfig,
    *,
    density_cm3: float | None = None,
    fit: bool = True,
) -> int:
    """Run one protocol instance and write its traces.

    Returns:
        Exit code; non-converged fits give CONVERGENCE_ERROR after the traces are written
    """
    logger = get_logger()
    exp = config.experiment
    output_dir = Path(config.output.directory)

    try:
        # Step 1: Validate output directory
        output_result = validate_output_dir(str(output_dir), config.output.overwrite)
        if not output_result.valid:
            logger.error(output_result.error or "Invalid output directory")
            return output_result.error_code or ExitCode.IO_ERROR

        # Step 2: Resolve density and temperature
        density = resolve_density(config, density_cm3)
        density_result = validate_density(density)
        if not density_result.valid:
            logger.error(density_result.error or "Invalid density")
            return density_result.error_code or ExitCode.VALIDATION_ERROR
        temperature = exp.cell.temperature_k or temperature_from_density(density)
        b_field = exp.ramsey.b_field_gauss if exp.protocol == "C" else 0.0
        point = SweepPoint(exp.protocol, density, b_field, temperature)
        logger.info(f"Protocol {exp.protocol} at n = {density:.3e} cm^-3, T = {temperature:.2f} K")

        # Step 3: Pump and record
        with logger.spinner("Pumping and recording...") as status:
            result: PointResult = run_point(point, config, fit=False)
            status.update("Done")
        run = result.run
        logger.success(
            f"Recorded {', '.join(f'{k} ({len(t)} samples)' for k, t in sorted(run.traces.items()))}"
        )

        # Step 4: Write traces and config
        output_dir.mkdir(parents=True, exist_ok=True)
        paths = write_run_traces(run, output_dir, point.label)
        save_config(config, output_dir / "config.json")
        for path in paths:
            logger.info(f"  → {path.name}")

        if not fit:
            return ExitCode.SUCCESS

        # Step 5: Fit
        trace = run.traces[FIT_TRACE[exp.protocol]]
        result.fit = fit_trace(trace, use_raw=config.output.fit_raw)
        report = write_fit_report(output_dir / f"{point.label}_fit.json", fit_entries([result]))
        lines = [
            f"{name:>7} = {value:.6g} ± {err:.2g}"
            for name, value, err in zip(result.fit.names, result.fit.params, result.fit.errors)
        ]
        lines.append(f"rms residual = {result.fit.rms_residual:.3g}")
        logger.box(f"{result.fit.model} fit ({report.name})", lines)

        if not result.fit.converged:
            logger.error(f"Fit did not converge: {result.fit.message}")
            return ExitCode.CONVERGENCE_ERROR

        logger.success(f"Done. Outputs in {output_dir}")
        return ExitCode.SUCCESS

    except RelaxError as e:
        logger.error(str(e))
        return e.error_code
    except KeyboardInterrupt:
        logger.warning("\nOperation cancelled by user")
        return ExitCode.INTERRUPT


__all__ = ["execute_simulate"]
