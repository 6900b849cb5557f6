"""Tests for config parsing, lookup and validation."""

import dataclasses
import json

import pytest

from src.types import ExitCode
from src.utils.config import (
    ConfigError,
    ConfigParseError,
    ConstraintError,
    UnitMismatchError,
    UnknownKeyError,
    config_to_dict,
    default_experiment,
    experiment_for_protocol,
    get_config_dir,
    load_run_config,
    parse_config,
    parse_config_text,
    resolve_config,
    save_config,
    shipped_config_names,
    split_unit,
)


class TestUnits:
    """Unit suffixes on keys."""

    @pytest.mark.parametrize("key,expected", [
        ("delay_s", ("delay", "_s")),
        ("pressure_broadening_hz_per_torr", ("pressure_broadening", "_hz_per_torr")),
        ("gamma0_per_s", ("gamma0", "_per_s")),
        ("densities_cm3", ("densities", "_cm3")),
        ("protocol", ("protocol", "")),
    ])
    def test_split_unit(self, key, expected):
        assert split_unit(key) == expected

    def test_wrong_unit_names_expected_key(self):
        with pytest.raises(UnitMismatchError, match="delay_s"):
            parse_config({"ramsey": {"delay_ms": 0.1}})

    def test_wrong_unit_rejected_in_lenient_mode(self):
        with pytest.raises(UnitMismatchError):
            parse_config({"experiment": {"record_ms": 10}}, strict=False)


class TestParse:
    """Documents to RunConfig."""

    def test_empty_document_gives_defaults(self):
        config = parse_config({})
        assert config.experiment == default_experiment("A")
        assert config.numerics.doppler_groups == 1
        assert config.seed == 0

    def test_protocol_selects_lasers(self):
        config = parse_config({"experiment": {"protocol": "C"}})
        assert config.experiment.pump.transition == (2, 1)
        assert config.experiment.probe.polarization == "linear"

    def test_protocol_b_runs_in_linear_response(self):
        exp = parse_config({"experiment": {"protocol": "B"}}).experiment
        assert exp.pump.polarization == exp.probe.polarization == "sigma+"
        assert exp.pump.power_mw == pytest.approx(1e-3)
        assert exp.probe.power_mw <= 1e-3 * exp.pump.power_mw
        assert default_experiment("A").pump.power_mw == 1.5
        assert default_experiment("C").probe.power_mw == 0.01

    def test_partial_laser_override(self):
        config = parse_config({"experiment": {"protocol": "B", "pump": {"power_mw": 3.0}}})
        assert config.experiment.pump.power_mw == 3.0
        assert config.experiment.pump.polarization == "sigma+"

    def test_sections_and_lists(self):
        config = parse_config({
            "cell": {"buffer_pressure_torr": 20, "temperature_k": 340},
            "sweep": {"densities_cm3": [1e11, 2e11], "protocols": ["A", "C"]},
        })
        assert config.experiment.cell.buffer_pressure_torr == 20.0
        assert isinstance(config.experiment.cell.buffer_pressure_torr, float)
        assert config.sweep.densities_cm3 == (1e11, 2e11)
        assert config.sweep.protocols == ("A", "C")

    def test_unknown_key_strict(self):
        with pytest.raises(UnknownKeyError, match="numerics.workerz"):
            parse_config({"numerics": {"workerz": 2}})

    def test_unknown_key_lenient(self):
        config = parse_config({"numerics": {"workerz": 2}, "colour": "blue"}, strict=False)
        assert config.numerics.workers == 1

    def test_comment_keys_ignored(self):
        parse_config({"_comment": "notes", "cell": {"_why": "x"}})

    @pytest.mark.parametrize("document", [
        {"experiment": {"protocol": "D"}},
        {"numerics": {"doppler_groups": 1.5}},
        {"numerics": {"doppler_groups": True}},
        {"cell": {"buffer_pressure_torr": "thirty"}},
        {"experiment": {"pump": {"transition": [1, 2, 3]}}},
        {"experiment": {"pump": {"transition": [2, 3]}}},
        {"experiment": {"probe": {"power_mw": -1.0}}},
        {"ramsey": {"b_field_gauss": 5.0}},
        {"ramsey": {"residual_field_gauss": 1e-3}},
        {"cell": {"radius_cm": 0}},
        {"cell": {"temperature_k": 600}},
        {"experiment": {"probe_pulse_s": 1e-3, "probe_duty_cycle": 1.5}},
        {"numerics": {"min_record_samples": 4}},
        {"numerics": {"cumulative_back_action_limit": 0.0}},
    ])
    def test_constraint_violations(self, document):
        with pytest.raises(ConstraintError):
            parse_config(document)

    def test_not_an_object(self):
        with pytest.raises(ConstraintError):
            parse_config([1, 2, 3])

    def test_parse_error_position(self):
        with pytest.raises(ConfigParseError) as excinfo:
            parse_config_text('{\n  "seed": 1,\n  oops\n}')
        assert excinfo.value.line == 3
        assert excinfo.value.column == 3
        assert excinfo.value.error_code == ExitCode.IO_ERROR

    def test_round_trip_through_dict(self):
        config = load_run_config("paper_defaults")
        again = parse_config(json.loads(json.dumps(config_to_dict(config))), source=config.source)
        assert again == config


class TestLookup:
    """Named and file configs."""

    def test_shipped_configs(self):
        assert {"paper_defaults", "reference", "quick"} <= set(shipped_config_names())

    def test_paper_defaults_by_name(self, config_dir):
        config = load_run_config("paper_defaults")
        assert config.source == "paper_defaults (shipped)"
        assert config.experiment.cell.buffer_pressure_torr == 30.0
        assert config.experiment.cell.length_cm == 5.0
        assert config.experiment.cell.beam_waist_cm == 0.6
        assert config.sweep.densities_cm3[0] == 1e11
        assert config.sweep.densities_cm3[-1] == 9e11

    def test_reference_is_an_alias(self, config_dir):
        alias = dataclasses.replace(load_run_config("reference"), source="x")
        assert alias == dataclasses.replace(load_run_config("paper_defaults"), source="x")

    def test_quick_config(self, config_dir):
        config = load_run_config("quick")
        assert config.experiment.record_s == 0.01
        assert config.sweep.protocols == ("A", "C")
        assert config.source == "quick (shipped)"

    def test_defaults_without_name(self):
        assert load_run_config().source == "<defaults>"

    def test_env_config_dir(self, config_dir):
        assert get_config_dir() == config_dir
        (config_dir / "mine.json").write_text(json.dumps({"seed": 11}))
        config = load_run_config("mine")
        assert config.seed == 11
        assert config.source == str(config_dir / "mine.json")

    def test_user_config_shadows_shipped(self, config_dir):
        (config_dir / "quick.json").write_text(json.dumps({"seed": 3}))
        assert load_run_config("quick").seed == 3

    def test_path(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"experiment": {"protocol": "B"}}))
        assert load_run_config(str(path)).experiment.protocol == "B"

    def test_missing_name(self, config_dir):
        with pytest.raises(ConfigError) as excinfo:
            resolve_config("nope")
        assert excinfo.value.error_code == ExitCode.IO_ERROR
        assert "quick" in str(excinfo.value)

    def test_missing_path(self, tmp_path):
        with pytest.raises(ConfigError) as excinfo:
            resolve_config(str(tmp_path / "absent.json"))
        assert excinfo.value.error_code == ExitCode.IO_ERROR

    def test_save_and_reload(self, tmp_path):
        config = parse_config({"experiment": {"protocol": "C"}, "seed": 5})
        path = save_config(config, tmp_path / "out" / "config.json")
        again = load_run_config(str(path))
        assert dataclasses.replace(again, source=config.source) == config


class TestProtocolRetarget:
    """Switching an experiment to another protocol."""

    def test_same_protocol_unchanged(self):
        spec = dataclasses.replace(default_experiment("A"), record_s=0.5)
        assert experiment_for_protocol(spec, "A") is spec

    def test_lasers_reset_shared_sections_kept(self):
        spec = load_run_config("quick").experiment
        retargeted = experiment_for_protocol(spec, "C")
        assert retargeted.protocol == "C"
        assert retargeted.pump == default_experiment("C").pump
        assert retargeted.record_s == spec.record_s
        assert retargeted.cell == spec.cell

    def test_unknown_protocol(self):
        with pytest.raises(ConstraintError):
            default_experiment("Z")
