"""Trace and table CSV files.

A trace file is a block of ``# key=value`` metadata lines (sorted by key on
write, any order on read) followed by a CSV table:

    # alpha_ini=0.021
    # protocol=A
    time_s,alpha_raw,alpha_norm
    0,0.021,1
    0.001,0.0213,0.97

Floats are written with 17 significant digits, so a trace read back is
bit-identical to the one written.
"""

import csv
import io
from pathlib import Path
from typing import Sequence

import numpy as np

from src.types import DecayTrace, ExitCode, RelaxError


TRACE_COLUMNS = ("time_s", "alpha_raw", "alpha_norm")

GROUND_LABELS = tuple(
    [f"f1_m{m:+d}" for m in (-1, 0, 1)] + [f"f2_m{m:+d}" for m in (-2, -1, 0, 1, 2)]
)


class TraceFormatError(RelaxError):
    """Malformed trace file."""
    error_code = ExitCode.IO_ERROR

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"{message} (line {line})" if line is not None else message)
        self.line = line


def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence[object]], comments: dict[str, str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for key in sorted(comments):
        value = str(comments[key])
        if "\n" in key or "\n" in value or "=" in key:
            raise ValueError(f"Metadata entry {key!r} cannot be written on one line")
        buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    # newline="" keeps "\n" on every platform
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(buf.getvalue())
    return path


def write_trace_csv(trace: DecayTrace, path: str | Path) -> Path:
    rows = [
        (float(t), float(raw), float(norm))
        for t, raw, norm in zip(trace.times, trace.alpha_raw, trace.alpha_norm)
    ]
    return _write_rows(Path(path), TRACE_COLUMNS, rows, trace.metadata)


def read_trace_csv(path: str | Path) -> DecayTrace:
    """Read a trace file.

    Raises:
        TraceFormatError: On a missing header, a wrong column count or a non-numeric value
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise TraceFormatError(f"Cannot read trace file {path}: {e.strerror or e}") from e

    metadata: dict[str, str] = {}
    header_seen = False
    values: list[tuple[float, float, float]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" not in body:
                raise TraceFormatError(f"Metadata line without '=' in {path.name}", lineno)
            key, value = body.split("=", 1)
            metadata[key.strip()] = value.strip()
            continue
        fields = next(csv.reader([line]))
        if not header_seen:
            if tuple(f.strip() for f in fields) != TRACE_COLUMNS:
                raise TraceFormatError(
                    f"Expected header {','.join(TRACE_COLUMNS)} in {path.name}, got {line!r}", lineno
                )
            header_seen = True
            continue
        if len(fields) != len(TRACE_COLUMNS):
            raise TraceFormatError(
                f"Expected {len(TRACE_COLUMNS)} columns, got {len(fields)} in {path.name}", lineno
            )
        try:
            values.append(tuple(float(f) for f in fields))  # type: ignore[arg-type]
        except ValueError as e:
            raise TraceFormatError(f"Non-numeric value in {path.name}: {line!r}", lineno) from e

    if not header_seen:
        raise TraceFormatError(f"No header row in {path.name}")
    data = np.array(values, dtype=float).reshape(len(values), len(TRACE_COLUMNS))
    try:
        return DecayTrace(data[:, 0], data[:, 1], data[:, 2], metadata)
    except ValueError as e:
        raise TraceFormatError(f"{path.name}: {e}") from e


def write_populations_csv(trace: DecayTrace, path: str | Path) -> Path:
    """Companion file with the ground populations at each sample."""
    if trace.populations is None:
        raise ValueError("Trace carries no population record")
    rows = [
        (float(t), *(float(p) for p in pops))
        for t, pops in zip(trace.times, trace.populations)
    ]
    return _write_rows(Path(path), ("time_s", *GROUND_LABELS), rows, trace.metadata)


def write_table_csv(
    path: str | Path,
    columns: Sequence[str],
    rows: Sequence[Sequence[object]],
    metadata: dict[str, str] | None = None,
) -> Path:
    """Generic numeric table with optional ``#`` metadata lines."""
    for i, row in enumerate(rows):
        if len(row) != len(columns):
            raise ValueError(f"Row {i} has {len(row)} values for {len(columns)} columns")
    return _write_rows(Path(path), columns, rows, metadata or {})


__all__ = [
    "TRACE_COLUMNS",
    "GROUND_LABELS",
    "TraceFormatError",
    "format_float",
    "write_trace_csv",
    "read_trace_csv",
    "write_populations_csv",
    "write_table_csv",
]
