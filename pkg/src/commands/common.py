"""Pieces shared by the simulate, sweep, figures and validate commands."""

import dataclasses
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

from src.analysis.fitting import fit_trace
from src.analysis.rates import RatePoint
from src.physics.protocols import ProtocolRun, run_protocol
from src.physics.vapor import density_from_temperature
from src.types import DecayTrace, FitResult, RunConfig
from src.utils.config import experiment_for_protocol
from src.utils.reports import FitEntry
from src.utils.tracefile import write_trace_csv


# Trace of each protocol that carries the fitted rate
FIT_TRACE = {"A": "dark", "B": "dark", "C": "subtracted"}


@dataclass(frozen=True, order=True)
class SweepPoint:
    """One protocol run of a sweep; ordering is the merge order of results."""
    protocol: str
    density_cm3: float
    b_field_gauss: float = 0.0
    temperature_k: float | None = field(default=None, compare=False)

    @property
    def label(self) -> str:
        base = f"{self.protocol}_n{self.density_cm3:.3e}"
        if self.protocol == "C":
            base += f"_b{self.b_field_gauss:.3e}"
        return base


@dataclass
class PointResult:
    point: SweepPoint
    run: ProtocolRun
    fit: FitResult | None = None


def apply_overrides(
    config: RunConfig,
    *,
    protocol: str | None = None,
    temperature_k: float | None = None,
    b_field_gauss: float | None = None,
    delay_s: float | None = None,
    record_s: float | None = None,
    doppler_groups: int | None = None,
    workers: int | None = None,
    output: str | None = None,
) -> RunConfig:
    """CLI options layered over the loaded config."""
    exp = config.experiment
    if protocol is not None:
        exp = experiment_for_protocol(exp, protocol)
    if temperature_k is not None:
        exp = dataclasses.replace(exp, cell=dataclasses.replace(exp.cell, temperature_k=temperature_k))
    ramsey = exp.ramsey
    if b_field_gauss is not None:
        ramsey = dataclasses.replace(ramsey, b_field_gauss=b_field_gauss)
    if delay_s is not None:
        ramsey = dataclasses.replace(ramsey, delay_s=delay_s)
    exp = dataclasses.replace(exp, ramsey=ramsey)
    if record_s is not None:
        exp = dataclasses.replace(exp, record_s=record_s)

    numerics = config.numerics
    if doppler_groups is not None:
        numerics = dataclasses.replace(numerics, doppler_groups=doppler_groups)
    if workers is not None:
        numerics = dataclasses.replace(numerics, workers=workers)
    out = config.output if output is None else dataclasses.replace(config.output, directory=output)
    return dataclasses.replace(config, experiment=exp, numerics=numerics, output=out)


def density_points(config: RunConfig) -> list[tuple[float, float | None]]:
    """(density, temperature) pairs of the sweep; temperature None means derived."""
    if config.sweep.temperatures_k:
        return [(density_from_temperature(t), t) for t in config.sweep.temperatures_k]
    return [(n, config.experiment.cell.temperature_k) for n in config.sweep.densities_cm3]


def sweep_points(config: RunConfig) -> list[SweepPoint]:
    points = []
    for density, temperature in density_points(config):
        for protocol in config.sweep.protocols:
            fields = config.sweep.b_fields_gauss if protocol == "C" else (0.0,)
            for b in fields:
                points.append(SweepPoint(protocol, density, b, temperature))
    return sorted(points)


def run_point(point: SweepPoint, config: RunConfig, fit: bool = True) -> PointResult:
    """Run one sweep point; module level so process pools can pickle it."""
    spec = experiment_for_protocol(config.experiment, point.protocol)
    delays = config.sweep.delays_s or None
    run = run_protocol(
        spec,
        config.numerics,
        density_cm3=point.density_cm3,
        temperature_k=point.temperature_k,
        b_field_gauss=point.b_field_gauss if point.protocol == "C" else None,
        delays=delays,
        constants_file=config.constants_file,
    )
    result = PointResult(point, run)
    if fit:
        result.fit = fit_trace(run.traces[FIT_TRACE[point.protocol]], use_raw=config.output.fit_raw)
    return result


Runner = Callable[..., PointResult]


def protocol_runner(config: RunConfig) -> Runner:
    """run_point memoized by (protocol, density, field) so checks and tests share runs."""

    @lru_cache(maxsize=None)
    def run(protocol: str, density: float, b_field_gauss: float = 0.0) -> PointResult:
        return run_point(SweepPoint(protocol, density, b_field_gauss), config)

    return run


def write_run_traces(run: ProtocolRun, directory: Path, label: str) -> list[Path]:
    return [
        write_trace_csv(trace, directory / f"{label}_{key}.csv")
        for key, trace in sorted(run.traces.items())
    ]


def fit_entries(results: list[PointResult]) -> list[FitEntry]:
    entries = []
    for res in results:
        if res.fit is None:
            continue
        key = FIT_TRACE[res.point.protocol]
        trace: DecayTrace = res.run.traces[key]
        entries.append(FitEntry(f"{res.point.label}_{key}.csv", res.fit, dict(trace.metadata)))
    return entries


def rate_points(results: list[PointResult]) -> list[RatePoint]:
    """Group fits by density; for protocol C the first field value is used."""
    by_density: dict[float, RatePoint] = {}
    for res in sorted(results, key=lambda r: r.point):
        if res.fit is None:
            continue
        point = by_density.setdefault(
            res.point.density_cm3,
            RatePoint(res.point.density_cm3, res.run.temperature_k),
        )
        point.fits.setdefault(res.point.protocol, res.fit)
    return list(by_density.values())


def format_rate(value: float, error: float) -> str:
    if not math.isfinite(value):
        return "-"
    if not math.isfinite(error):
        return f"{value:.1f}"
    return f"{value:.1f} ± {error:.1f}"


def resolve_density(config: RunConfig, density_cm3: float | None) -> float:
    """Density for a single run: option, then cell temperature, then the first sweep point."""
    if density_cm3 is not None:
        return density_cm3
    if config.experiment.cell.temperature_k is not None:
        return density_from_temperature(config.experiment.cell.temperature_k)
    return density_points(config)[0][0]


__all__ = [
    "FIT_TRACE",
    "SweepPoint",
    "PointResult",
    "apply_overrides",
    "density_points",
    "sweep_points",
    "run_point",
    "Runner",
    "protocol_runner",
    "write_run_traces",
    "fit_entries",
    "rate_points",
    "format_rate",
    "resolve_density",
]
