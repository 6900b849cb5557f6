"""Fit and rate reports.

Reports are JSON documents tagged with a schema string:

    {
      "schema": "rbrelax.fit/1",
      "fits": [
        {"trace": "A_n3.8e11.csv", "metadata": {...}, "fit": {FitResult.to_dict()}}
      ]
    }

    {
      "schema": "rbrelax.rates/1",
      "cross_section_cm2": ..., "cross_section_err_cm2": ...,
      "intercept_per_s": ..., "intercept_err_per_s": ...,
      "rows": [{"density_cm3": ..., "hyperfine": ..., ...}]
    }

Non-finite values are written as JSON ``NaN``.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from src.types import DerivedRates, ExitCode, FitResult, RateRow, RelaxError
from src.utils.tracefile import write_table_csv


FIT_SCHEMA = "rbrelax.fit/1"
RATES_SCHEMA = "rbrelax.rates/1"

RATE_COLUMNS = tuple(f.name for f in dataclasses.fields(RateRow))


class ReportFormatError(RelaxError):
    """Unreadable or malformed report."""
    error_code = ExitCode.IO_ERROR


@dataclass
class FitEntry:
    """One fitted trace in a report."""
    trace: str
    fit: FitResult
    metadata: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"trace": self.trace, "metadata": dict(sorted(self.metadata.items())), "fit": self.fit.to_dict()}


def _dump(path: Path, document: dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        json.dump(document, f, indent=2)
        f.write("\n")
    return path


def _load(path: Path, schema: str) -> dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except OSError as e:
        raise ReportFormatError(f"Cannot read report {path}: {e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise ReportFormatError(f"Invalid JSON in {path} (line {e.lineno}, column {e.colno})") from e
    if not isinstance(document, dict) or document.get("schema") != schema:
        raise ReportFormatError(f"{path} is not a '{schema}' report")
    return document


def write_fit_report(path: str | Path, entries: list[FitEntry]) -> Path:
    return _dump(Path(path), {"schema": FIT_SCHEMA, "fits": [e.to_dict() for e in entries]})


def read_fit_report(path: str | Path) -> list[FitEntry]:
    path = Path(path)
    document = _load(path, FIT_SCHEMA)
    try:
        return [
            FitEntry(
                trace=str(item["trace"]),
                fit=FitResult.from_dict(item["fit"]),
                metadata={str(k): str(v) for k, v in item.get("metadata", {}).items()},
            )
            for item in document["fits"]
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise ReportFormatError(f"Malformed fit entry in {path}: {e}") from e


def rates_to_dict(rates: DerivedRates) -> dict[str, Any]:
    return {
        "schema": RATES_SCHEMA,
        "cross_section_cm2": rates.cross_section_cm2,
        "cross_section_err_cm2": rates.cross_section_err_cm2,
        "intercept_per_s": rates.intercept_per_s,
        "intercept_err_per_s": rates.intercept_err_per_s,
        "rows": [dataclasses.asdict(row) for row in rates.rows],
    }


def write_rates_report(directory: str | Path, rates: DerivedRates, stem: str = "rates") -> tuple[Path, Path]:
    """Write ``<stem>.json`` and the ``<stem>.csv`` table of rates versus density."""
    directory = Path(directory)
    report = _dump(directory / f"{stem}.json", rates_to_dict(rates))
    table = write_table_csv(
        directory / f"{stem}.csv",
        RATE_COLUMNS,
        [tuple(float(getattr(row, c)) for c in RATE_COLUMNS) for row in rates.rows],
        {
            "cross_section_cm2": repr(rates.cross_section_cm2),
            "cross_section_err_cm2": repr(rates.cross_section_err_cm2),
        },
    )
    return report, table


def read_rates_report(path: str | Path) -> DerivedRates:
    path = Path(path)
    document = _load(path, RATES_SCHEMA)
    try:
        return DerivedRates(
            rows=tuple(RateRow(**{k: float(v) for k, v in row.items()}) for row in document["rows"]),
            cross_section_cm2=float(document["cross_section_cm2"]),
            cross_section_err_cm2=float(document["cross_section_err_cm2"]),
            intercept_per_s=float(document["intercept_per_s"]),
            intercept_err_per_s=float(document["intercept_err_per_s"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ReportFormatError(f"Malformed rates report {path}: {e}") from e


__all__ = [
    "FIT_SCHEMA",
    "RATES_SCHEMA",
    "RATE_COLUMNS",
    "ReportFormatError",
    "FitEntry",
    "write_fit_report",
    "read_fit_report",
    "rates_to_dict",
    "write_rates_report",
    "read_rates_report",
]
