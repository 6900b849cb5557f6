"""Tests for trace and table CSV files."""

import numpy as np
import pytest

from src.types import DecayTrace, ExitCode
from src.utils.tracefile import (
    GROUND_LABELS,
    TraceFormatError,
    format_float,
    read_trace_csv,
    write_populations_csv,
    write_table_csv,
    write_trace_csv,
)


HEADER = "time_s,alpha_raw,alpha_norm\n"


class TestTraceFiles:
    """Writing and reading traces."""

    def test_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        t = np.cumsum(rng.uniform(1e-5, 1e-3, 50))
        trace = DecayTrace(t, rng.random(50) / 3, rng.random(50) * np.pi,
                           {"protocol": "C", "b_z_gauss": repr(1e-3)})
        back = read_trace_csv(write_trace_csv(trace, tmp_path / "trace.csv"))
        np.testing.assert_array_equal(back.times, trace.times)
        np.testing.assert_array_equal(back.alpha_raw, trace.alpha_raw)
        np.testing.assert_array_equal(back.alpha_norm, trace.alpha_norm)
        assert back.metadata == trace.metadata

    def test_metadata_sorted_on_write(self, tmp_path, trace_factory):
        path = write_trace_csv(trace_factory([0.0, 1.0], [1.0, 0.5], zeta="1", alpha="2"), tmp_path / "t.csv")
        lines = path.read_text().splitlines()
        assert lines[:3] == ["# alpha=2", "# zeta=1", HEADER.strip()]

    def test_metadata_in_any_order(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("# b=2\n\n# a=x=y\n" + HEADER + "0,1,1\n")
        assert read_trace_csv(path).metadata == {"b": "2", "a": "x=y"}

    def test_empty_trace(self, tmp_path, trace_factory):
        back = read_trace_csv(write_trace_csv(trace_factory([], []), tmp_path / "empty.csv"))
        assert len(back) == 0

    def test_floats_keep_all_digits(self):
        assert float(format_float(0.1 + 0.2)) == 0.1 + 0.2

    def test_multiline_metadata_rejected(self, tmp_path, trace_factory):
        with pytest.raises(ValueError):
            write_trace_csv(trace_factory([0.0], [1.0], note="a\nb"), tmp_path / "t.csv")


class TestMalformedTraces:
    """Errors carry the offending line."""

    @pytest.mark.parametrize("text,line", [
        ("# protocol A\n" + HEADER, 1),
        ("# a=1\ntime,alpha\n0,1\n", 2),
        (HEADER + "0,1,1\n0.1,1\n", 3),
        (HEADER + "0,1,1\n0.1,abc,1\n", 3),
    ])
    def test_line_numbers(self, tmp_path, text, line):
        path = tmp_path / "bad.csv"
        path.write_text(text)
        with pytest.raises(TraceFormatError) as excinfo:
            read_trace_csv(path)
        assert excinfo.value.line == line
        assert excinfo.value.error_code == ExitCode.IO_ERROR

    def test_no_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# a=1\n")
        with pytest.raises(TraceFormatError, match="No header"):
            read_trace_csv(path)

    def test_times_not_increasing(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(HEADER + "0.1,1,1\n0,1,1\n")
        with pytest.raises(TraceFormatError, match="increasing"):
            read_trace_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(TraceFormatError):
            read_trace_csv(tmp_path / "absent.csv")


class TestTables:
    """Populations and generic tables."""

    def test_population_columns(self, tmp_path):
        pops = np.full((2, 8), 0.125)
        trace = DecayTrace([0.0, 1e-3], [0.1, 0.09], [1.0, 0.5], {"protocol": "B"}, pops)
        lines = write_populations_csv(trace, tmp_path / "pops.csv").read_text().splitlines()
        assert lines[1] == ",".join(("time_s", *GROUND_LABELS))
        assert lines[2].split(",")[1:] == ["0.125"] * 8

    def test_populations_required(self, tmp_path, trace_factory):
        with pytest.raises(ValueError):
            write_populations_csv(trace_factory([0.0], [1.0]), tmp_path / "pops.csv")

    def test_table_row_width(self, tmp_path):
        with pytest.raises(ValueError, match="Row 1"):
            write_table_csv(tmp_path / "t.csv", ("a", "b"), [(1.0, 2.0), (3.0,)])

    def test_table_metadata(self, tmp_path):
        path = write_table_csv(tmp_path / "t.csv", ("a", "b"), [(1.5, 2)], {"k": "v"})
        assert path.read_text() == "# k=v\na,b\n1.5,2\n"
