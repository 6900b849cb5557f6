"""Entry point & CLI setup for rbrelax.

This module provides the CLI using Click, handling:
- Global verbosity and version options
- Config loading (named or file configs) with command-line overrides
- Routing to the subcommands
- Global error handling and exit codes

CLI Structure:
    rbrelax [-v | -q] COMMAND [OPTIONS]

    Commands:
        simulate     Run one protocol at one density, write traces and a fit
        sweep        Run protocols over densities, derive rates and the cross-section
        fit          Fit trace CSV files
        figures      Write the data files behind the standard plots
        validate     Run the invariant suite

    See 'rbrelax COMMAND --help' for the options of each command.

Exit Codes:
    0: Success
    1: Unexpected error
    2: Validation error (invalid config, option or failed invariant)
    3: Convergence error (fit, steady state or self-consistency)
    4: I/O or parse error
    130: User interrupt (Ctrl+C)

Usage:
    # Protocol A at one density
    rbrelax simulate --density 3.8e11

    # Zeeman decoherence at 2 mG
    rbrelax simulate --protocol C --field 2e-3

    # Sweep with a shipped config on 4 worker processes
    rbrelax sweep --config paper_defaults --workers 4

    # Refit a trace with 1% synthetic noise
    rbrelax fit output/A_n3.800e+11_dark.csv --noise 0.01 --seed 7
"""

import dataclasses
import sys
import traceback
from typing import Callable

import click

from src import __version__
from src.types import ExitCode, RelaxError, RunConfig
from src.utils.logger import get_logger, setup_logger


__app_name__ = "rbrelax"

PROTOCOL_CHOICE = click.Choice(["A", "B", "C"])
MODEL_CHOICE = click.Choice(["exponential", "double_exponential", "decaying_sinusoid"])


def version_callback(ctx: click.Context, param: click.Parameter, value: bool) -> None:
    """Display version information and exit."""
    if not value or ctx.resilient_parsing:
        return
    click.echo(f"{__app_name__} v{__version__}")
    click.echo("Rubidium-87 ground-state relaxation in buffer-gas vapor cells")
    ctx.exit(0)


def config_options(func: Callable) -> Callable:
    """--config and --lenient, shared by the commands that read a run config."""
    func = click.option(
        "--lenient",
        is_flag=True,
        default=False,
        help="Warn about unknown config keys instead of rejecting them",
    )(func)
    func = click.option(
        "-c", "--config",
        "config_name",
        type=str,
        default=None,
        help="Config file path or name (searched in $RBRELAX_CONFIG_DIR, then the shipped configs)",
    )(func)
    return func


def run_options(func: Callable) -> Callable:
    """Overrides layered over the loaded config."""
    options = [
        click.option("-o", "--output", type=click.Path(), default=None, help="Output directory"),
        click.option("--doppler-groups", type=click.IntRange(min=1), default=None,
                     help="Gauss-Hermite velocity groups"),
        click.option("--record", "record_s", type=float, default=None,
                     help="Record length after pump shut-off (s)"),
        click.option("--delay", "delay_s", type=float, default=None,
                     help="Protocol C delay before the field is switched on (s)"),
        click.option("--field", "b_field_gauss", type=float, default=None,
                     help="Protocol C axial field (G)"),
        click.option("--temperature", "temperature_k", type=float, default=None,
                     help="Cell temperature (K); default derived from the density"),
    ]
    for option in options:
        func = option(func)
    return func


def load_config(
    config_name: str | None,
    lenient: bool,
    **overrides,
) -> RunConfig:
    """Load, apply overrides and re-check the constraints.

    Raises:
        ConfigError: If the config cannot be read, parsed or validated
    """
    from src.commands.common import apply_overrides
    from src.utils.config import ConstraintError, load_run_config
    from src.utils.validation import validate_run_config

    config = load_run_config(config_name, strict=not lenient)
    config = apply_overrides(config, **overrides)
    result = validate_run_config(config)
    if not result.valid:
        raise ConstraintError(result.error or "Invalid configuration")
    return config


def run_command(ctx: click.Context, command: Callable[[], int]) -> None:
    """Run a command handler and exit with its code.

    RelaxError maps to its own exit code, Ctrl+C to 130 and anything else
    to 1 (with a traceback in verbose mode).
    """
    logger = get_logger()
    try:
        exit_code = command()
    except RelaxError as e:
        logger.error(str(e))
        exit_code = e.error_code
    except KeyboardInterrupt:
        logger.warning("\nOperation cancelled by user")
        exit_code = ExitCode.INTERRUPT
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        if logger.verbose:
            traceback.print_exc()
        exit_code = ExitCode.UNEXPECTED_ERROR
    ctx.exit(int(exit_code))


@click.group(
    name="rbrelax",
    context_settings={"help_option_names": ["-h", "--help"]},
)
@click.option(
    "-v", "--verbose",
    is_flag=True,
    default=False,
    help="Enable verbose debug output",
)
@click.option(
    "-q", "--quiet",
    is_flag=True,
    default=False,
    help="Suppress all output except errors",
)
@click.option(
    "--version",
    is_flag=True,
    callback=version_callback,
    expose_value=False,
    is_eager=True,
    help="Show version and exit",
)
@click.pass_context
def main(ctx: click.Context, verbose: bool, quiet: bool) -> None:
    """rbrelax - simulate and analyze 87Rb ground-state relaxation.

    \b
    Examples:
      rbrelax simulate --density 3.8e11                # protocol A
      rbrelax simulate --protocol C --field 2e-3       # Zeeman decoherence
      rbrelax sweep --config paper_defaults -w 4       # rates and cross-section
      rbrelax fit out/A_n3.800e+11_dark.csv            # refit a trace
      rbrelax figures --config quick --no-sweep        # plotting data
      rbrelax validate --full                          # invariant suite
    """
    ctx.ensure_object(dict)
    ctx.obj["logger"] = setup_logger(verbose=verbose, quiet=quiet)


@main.command()
@config_options
@click.option("-p", "--protocol", type=PROTOCOL_CHOICE, default=None, help="Protocol to run")
@click.option("-n", "--density", "density_cm3", type=float, default=None,
              help="Rubidium density (cm^-3); default from the temperature or the first sweep point")
@run_options
@click.option("--no-fit", is_flag=True, default=False, help="Write traces only")
@click.pass_context
def simulate(
    ctx: click.Context,
    config_name: str | None,
    lenient: bool,
    protocol: str | None,
    density_cm3: float | None,
    temperature_k: float | None,
    b_field_gauss: float | None,
    delay_s: float | None,
    record_s: float | None,
    doppler_groups: int | None,
    output: str | None,
    no_fit: bool,
) -> None:
    """Pump to steady state, record the protocol traces and fit them."""
    from src.commands.simulate import execute_simulate

    def command() -> int:
        config = load_config(
            config_name, lenient,
            protocol=protocol, temperature_k=temperature_k, b_field_gauss=b_field_gauss,
            delay_s=delay_s, record_s=record_s, doppler_groups=doppler_groups, output=output,
        )
        return execute_simulate(config, density_cm3=density_cm3, fit=not no_fit)

    run_command(ctx, command)


@main.command()
@config_options
@click.option("-p", "--protocol", "protocols", type=PROTOCOL_CHOICE, multiple=True,
              help="Restrict the sweep to these protocols (repeatable)")
@run_options
@click.option("-w", "--workers", type=click.IntRange(min=1), default=None, help="Worker processes")
@click.pass_context
def sweep(
    ctx: click.Context,
    config_name: str | None,
    lenient: bool,
    protocols: tuple[str, ...],
    temperature_k: float | None,
    b_field_gauss: float | None,
    delay_s: float | None,
    record_s: float | None,
    doppler_groups: int | None,
    output: str | None,
    workers: int | None,
) -> None:
    """Run the protocols over the density sweep and derive the rates."""
    from src.commands.sweep import execute_sweep

    def command() -> int:
        config = load_config(
            config_name, lenient,
            temperature_k=temperature_k, b_field_gauss=b_field_gauss, delay_s=delay_s,
            record_s=record_s, doppler_groups=doppler_groups, workers=workers, output=output,
        )
        if protocols:
            config = dataclasses.replace(
                config, sweep=dataclasses.replace(config.sweep, protocols=tuple(protocols))
            )
        return execute_sweep(config)

    run_command(ctx, command)


@main.command()
@click.argument("paths", nargs=-1, type=click.Path())
@click.option("-m", "--model", type=MODEL_CHOICE, default=None,
              help="Fit model; default from each trace's metadata")
@click.option("--raw", "use_raw", is_flag=True, default=False,
              help="Fit the raw absorption instead of the normalized one")
@click.option("--noise", type=click.FloatRange(min=0.0), default=0.0,
              help="Add Gaussian noise of this fraction of the amplitude before fitting")
@click.option("--seed", type=int, default=0, show_default=True, help="Noise seed")
@click.option("-r", "--report", type=click.Path(), default=None,
              help="Report path (default: fits.json next to the first trace)")
@click.pass_context
def fit(
    ctx: click.Context,
    paths: tuple[str, ...],
    model: str | None,
    use_raw: bool,
    noise: float,
    seed: int,
    report: str | None,
) -> None:
    """Fit trace CSV files and write a fit report."""
    from src.commands.fit import execute_fit

    run_command(ctx, lambda: execute_fit(
        list(paths), model=model, use_raw=use_raw, report=report, noise=noise, seed=seed,
    ))


@main.command()
@config_options
@click.option("-n", "--density", "density_cm3", type=float, default=None,
              help="Density of the single-point runs (cm^-3)")
@run_options
@click.option("-w", "--workers", type=click.IntRange(min=1), default=None, help="Worker processes")
@click.option("--no-sweep", is_flag=True, default=False, help="Skip the rates-versus-density sweep")
@click.option("--m-state", is_flag=True, default=False,
              help="Also estimate the M-state share of the decoherence signal")
@click.pass_context
def figures(
    ctx: click.Context,
    config_name: str | None,
    lenient: bool,
    density_cm3: float | None,
    temperature_k: float | None,
    b_field_gauss: float | None,
    delay_s: float | None,
    record_s: float | None,
    doppler_groups: int | None,
    output: str | None,
    workers: int | None,
    no_sweep: bool,
    m_state: bool,
) -> None:
    """Write the data files behind the decay, Ramsey, dark-state and rates plots."""
    from src.commands.figures import execute_figures

    def command() -> int:
        config = load_config(
            config_name, lenient,
            temperature_k=temperature_k, b_field_gauss=b_field_gauss, delay_s=delay_s,
            record_s=record_s, doppler_groups=doppler_groups, workers=workers, output=output,
        )
        return execute_figures(config, density_cm3=density_cm3, sweep=not no_sweep, m_state=m_state)

    run_command(ctx, command)


@main.command()
@config_options
@click.option("--full", is_flag=True, default=False, help="Include a complete protocol A run (slow)")
@click.pass_context
def validate(ctx: click.Context, config_name: str | None, lenient: bool, full: bool) -> None:
    """Run the invariant suite; exits with 2 if any check fails."""
    from src.commands.validate import execute_validate

    def command() -> int:
        config = load_config(config_name, lenient)
        return execute_validate(config, full=full)

    run_command(ctx, command)


# Entry point for direct execution
if __name__ == "__main__":
    sys.exit(main())
