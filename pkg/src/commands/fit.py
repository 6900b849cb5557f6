"""Fit recorded traces.

Workflow Steps:
    1. Validate inputs
    2. Read each trace (optionally add seeded synthetic noise)
    3. Fit with the explicit model or the one implied by the trace metadata
    4. Show the fitted rates and write the fit report

Usage:
    from src.commands.fit import execute_fit

    exit_code = execute_fit(["out/A_n3.800e+11_dark.csv"], report="out/fits.json")
"""

from pathlib import Path

from src.analysis.fitting import add_noise, fit_trace
from src.types import ExitCode, RelaxError
from src.utils.logger import get_logger
from src.utils.reports import FitEntry, write_fit_report
from src.utils.tracefile import read_trace_csv
from src.utils.validation import validate_input_file


# Parameter shown as "the rate" in the summary table, per model
RATE_PARAMETER = {
    "exponential": "gamma",
    "double_exponential": "gamma2",
    "decaying_sinusoid": "gamma",
}


def execute_fit(
    paths: list[str],
    *,
    model: str | None = None,
    use_raw: bool = False,
    report: str | None = None,
    noise: float = 0.0,
    seed: int = 0,
) -> int:
    """Fit each trace file and write one report.

    Returns:
        Exit code; CONVERGENCE_ERROR if any fit failed
    """
    logger = get_logger()

    try:
        # Step 1: Validate inputs
        if not paths:
            logger.error("No trace files given")
            return ExitCode.VALIDATION_ERROR
        for path in paths:
            result = validate_input_file(path)
            if not result.valid:
                logger.error(result.error or f"Invalid input: {path}")
                return result.error_code or ExitCode.IO_ERROR

        entries: list[FitEntry] = []
        for i, path in enumerate(paths):
            # Step 2: Read
            trace = read_trace_csv(path)
            if noise > 0:
                trace = add_noise(trace, noise, seed + i)
                logger.debug(f"Added {noise:.2%} noise to {Path(path).name} (seed {seed + i})")

            # Step 3: Fit
            fit = fit_trace(trace, model, use_raw=use_raw)
            entries.append(FitEntry(Path(path).name, fit, dict(trace.metadata)))
            logger.debug(f"{Path(path).name}: {fit.model}, {fit.iterations} iterations, {fit.message}")

        # Step 4: Report
        rows = []
        for entry in entries:
            name = RATE_PARAMETER.get(entry.fit.model, entry.fit.names[1])
            rows.append([
                entry.trace,
                entry.fit.model,
                f"{entry.fit.param(name):.4g} ± {entry.fit.error(name):.2g}",
                f"{entry.fit.rms_residual:.2e}",
                "yes" if entry.fit.converged else "no",
            ])
        logger.table("Fits", ["trace", "model", "rate (s^-1)", "rms", "converged"], rows)

        report_path = Path(report) if report else Path(paths[0]).parent / "fits.json"
        write_fit_report(report_path, entries)
        logger.info(f"Report written to {report_path}")

        failed = [e for e in entries if not e.fit.converged]
        for entry in failed:
            logger.error(f"Fit failed for {entry.trace}: {entry.fit.message}")
        if failed:
            return ExitCode.CONVERGENCE_ERROR

        logger.success(f"Fitted {len(entries)} trace(s)")
        return ExitCode.SUCCESS

    except RelaxError as e:
        logger.error(str(e))
        return e.error_code
    except KeyboardInterrupt:
        logger.warning("\nOperation cancelled by user")
        return ExitCode.INTERRUPT


__all__ = ["execute_fit", "RATE_PARAMETER"]
