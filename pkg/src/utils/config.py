"""Run configuration for rbrelax.

A run is described by a JSON document with nested sections. Physical
quantities carry their unit as a key suffix, for example:

    {
      "experiment": {
        "protocol": "C",
        "pump": {"transition": [2, 1], "polarization": "linear", "power_mw": 1.5},
        "record_s": 0.02
      },
      "cell": {"buffer_pressure_torr": 30, "temperature_k": 340},
      "ramsey": {"b_field_gauss": 0.001, "delay_s": 1e-4},
      "sweep": {"densities_cm3": [1e11, 3e11, 5e11]}
    }

A key with a known stem but another unit suffix (``delay_ms`` for
``delay_s``) is rejected naming the expected unit. Unknown keys are errors
in strict mode and warnings otherwise.

Configuration Priority (highest to lowest):
    1. CLI options (--protocol, --density, --field, ...)
    2. Config file given with --config (name or path)
    3. Default values

Named configs resolve to ``NAME.json`` in $RBRELAX_CONFIG_DIR (default
~/.rbrelax), then among the configs shipped in ``src/configs``.

Usage:
    from src.utils.config import load_run_config

    config = load_run_config("paper_defaults")
    config = load_run_config("./my_run.json", strict=False)
"""

import dataclasses
import json
import os
import types
import typing
from importlib import resources
from pathlib import Path
from typing import Any, Literal, get_args, get_origin, get_type_hints

from src.types import (
    CellSpec,
    ExitCode,
    ExperimentSpec,
    LaserSpec,
    NumericsSpec,
    OutputSpec,
    RamseySpec,
    RelaxationSpec,
    RelaxError,
    RunConfig,
    SpinExchangeSpec,
    SweepSpec,
)
from src.utils.logger import get_logger
from src.utils.validation import validate_run_config


CONFIG_DIR_NAME = ".rbrelax"
ENV_CONFIG_DIR = "RBRELAX_CONFIG_DIR"

# Longest first so compound suffixes win
UNIT_SUFFIXES = tuple(sorted(
    ("_hz_per_torr", "_per_s", "_hz", "_s", "_gauss", "_cm3", "_cm2", "_cm", "_mm",
     "_torr", "_k", "_mw", "_m_s"),
    key=len,
    reverse=True,
))

DEFAULT_PUMP_POWER_MW = 1.5
DEFAULT_PROBE_POWER_MW = 0.01

# (pump, probe) power overrides. Protocol B keeps the pump in linear response
# (sigma+ pumping well below the relaxation rate) and the probe far below the pump.
PROTOCOL_POWERS_MW: dict[str, tuple[float, float]] = {
    "B": (1e-3, 1e-6),
}

# (transition, polarization) of pump and probe per protocol
PROTOCOL_LASERS: dict[str, tuple[tuple[int, int], str]] = {
    "A": ((1, 2), "linear"),
    "B": ((1, 2), "sigma+"),
    "C": ((2, 1), "linear"),
}

# Section name -> dataclass holding its fields
SECTIONS: dict[str, type] = {
    "cell": CellSpec,
    "relaxation": RelaxationSpec,
    "spin_exchange": SpinExchangeSpec,
    "ramsey": RamseySpec,
    "sweep": SweepSpec,
    "numerics": NumericsSpec,
    "output": OutputSpec,
}

TOP_LEVEL_KEYS = ("constants_file", "seed", "experiment", *SECTIONS)

_EXPERIMENT_SCALARS = ("protocol", "pump_duration_s", "probe_pulse_s", "probe_duty_cycle", "record_s")


class ConfigError(RelaxError):
    """Configuration cannot be loaded."""
    error_code = ExitCode.VALIDATION_ERROR


class ConfigParseError(ConfigError):
    """JSON syntax error, with position."""
    error_code = ExitCode.IO_ERROR

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnitMismatchError(ConfigError):
    """Key names a known quantity with the wrong unit suffix."""


class UnknownKeyError(ConfigError):
    """Key not in the schema (strict mode)."""


class ConstraintError(ConfigError):
    """Value outside its allowed range."""


def split_unit(key: str) -> tuple[str, str]:
    """Split ``key`` into (stem, unit suffix); the suffix is "" when there is none."""
    for suffix in UNIT_SUFFIXES:
        if key.endswith(suffix) and len(key) > len(suffix):
            return key[: -len(suffix)], suffix
    return key, ""


def _check_keys(section: str, data: dict[str, Any], known: typing.Iterable[str], strict: bool) -> None:
    known = list(known)
    stems = {split_unit(k)[0]: split_unit(k)[1] for k in known}
    for key in data:
        if key in known or key.startswith("_"):
            continue
        stem, suffix = split_unit(key)
        if stem not in stems:
            # Suffixes outside UNIT_SUFFIXES (delay_ms for delay_s)
            for known_stem, known_suffix in stems.items():
                if known_suffix and key.startswith(known_stem + "_"):
                    stem, suffix = known_stem, key[len(known_stem):]
                    break
        if stem in stems:
            expected = stems[stem] or "no unit suffix"
            raise UnitMismatchError(
                f"{section}.{key}: unit '{suffix or 'none'}' does not match, expected "
                f"'{stem}{stems[stem]}' ({expected})"
            )
        message = f"Unknown config key {section}.{key}"
        if strict:
            raise UnknownKeyError(message)
        get_logger().warning(f"{message} (ignored)")


def _coerce(path: str, value: Any, annotation: Any) -> Any:
    """Convert a JSON value to the annotated field type."""
    origin = get_origin(annotation)
    args = get_args(annotation)

    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(path, value, inner[0])
    if origin is Literal:
        if value not in args:
            raise ConstraintError(f"{path}: {value!r} is not one of {list(args)}")
        return value
    if origin is tuple:
        if not isinstance(value, list):
            raise ConstraintError(f"{path}: expected a list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(f"{path}[{i}]", v, args[0]) for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConstraintError(f"{path}: expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(f"{path}[{i}]", v, a) for i, (v, a) in enumerate(zip(value, args)))
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConstraintError(f"{path}: expected true or false, got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConstraintError(f"{path}: expected an integer, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConstraintError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConstraintError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build(section: str, cls: type, data: Any, strict: bool, base: Any = None) -> Any:
    if not isinstance(data, dict):
        raise ConstraintError(f"{section}: expected an object")
    hints = get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    _check_keys(section, data, names, strict)
    values = {
        name: _coerce(f"{section}.{name}", data[name], hints[name])
        for name in names
        if name in data
    }
    if base is not None:
        return dataclasses.replace(base, **values)
    return cls(**values)


def default_laser(protocol: str, role: Literal["pump", "probe"]) -> LaserSpec:
    transition, polarization = PROTOCOL_LASERS[protocol]
    pump_mw, probe_mw = PROTOCOL_POWERS_MW.get(protocol, (DEFAULT_PUMP_POWER_MW, DEFAULT_PROBE_POWER_MW))
    power = pump_mw if role == "pump" else probe_mw
    return LaserSpec(transition, polarization, power)  # type: ignore[arg-type]


def default_experiment(protocol: str = "A") -> ExperimentSpec:
    if protocol not in PROTOCOL_LASERS:
        raise ConstraintError(f"Unknown protocol {protocol!r}; expected one of {list(PROTOCOL_LASERS)}")
    return ExperimentSpec(
        protocol=protocol,  # type: ignore[arg-type]
        pump=default_laser(protocol, "pump"),
        probe=default_laser(protocol, "probe"),
    )


def experiment_for_protocol(experiment: ExperimentSpec, protocol: str) -> ExperimentSpec:
    """The experiment re-targeted to ``protocol``.

    Lasers revert to the protocol defaults unless the experiment already is
    that protocol; cell, relaxation, exchange and Ramsey sections are shared.
    """
    if experiment.protocol == protocol:
        return experiment
    base = default_experiment(protocol)
    return dataclasses.replace(
        experiment, protocol=base.protocol, pump=base.pump, probe=base.probe
    )


def parse_config(data: Any, *, strict: bool = True, source: str = "<dict>") -> RunConfig:
    """Build a validated RunConfig from a decoded JSON document.

    Raises:
        UnitMismatchError: If a key has the wrong unit suffix
        UnknownKeyError: If a key is not in the schema (strict mode)
        ConstraintError: If a value has the wrong type or is out of range
    """
    if not isinstance(data, dict):
        raise ConstraintError("Config document must be a JSON object")
    _check_keys("<root>", data, TOP_LEVEL_KEYS, strict)

    exp_data = data.get("experiment", {})
    if not isinstance(exp_data, dict):
        raise ConstraintError("experiment: expected an object")
    _check_keys("experiment", exp_data, (*_EXPERIMENT_SCALARS, "pump", "probe"), strict)
    experiment = default_experiment(_coerce("experiment.protocol", exp_data.get("protocol", "A"), str))
    hints = get_type_hints(ExperimentSpec)
    scalars = {
        key: _coerce(f"experiment.{key}", exp_data[key], hints[key])
        for key in _EXPERIMENT_SCALARS
        if key in exp_data and key != "protocol"
    }
    lasers = {
        role: _build(f"experiment.{role}", LaserSpec, exp_data[role], strict, getattr(experiment, role))
        for role in ("pump", "probe")
        if role in exp_data
    }
    sections = {
        name: _build(name, cls, data[name], strict)
        for name, cls in SECTIONS.items()
        if name in data and name in ("cell", "relaxation", "spin_exchange", "ramsey")
    }
    experiment = dataclasses.replace(experiment, **scalars, **lasers, **sections)

    config = RunConfig(
        experiment=experiment,
        sweep=_build("sweep", SweepSpec, data.get("sweep", {}), strict),
        numerics=_build("numerics", NumericsSpec, data.get("numerics", {}), strict),
        output=_build("output", OutputSpec, data.get("output", {}), strict),
        constants_file=_coerce("constants_file", data.get("constants_file"), str | None),
        seed=_coerce("seed", data.get("seed", 0), int),
        source=source,
    )
    result = validate_run_config(config)
    if not result.valid:
        raise ConstraintError(result.error or "Invalid configuration")
    return config


def parse_config_text(text: str, *, strict: bool = True, source: str = "<string>") -> RunConfig:
    """Parse JSON text.

    Raises:
        ConfigParseError: On a JSON syntax error
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"Invalid JSON in {source}: {e.msg}", e.lineno, e.colno) from e
    return parse_config(data, strict=strict, source=source)


def get_config_dir() -> Path:
    """User config directory: $RBRELAX_CONFIG_DIR or ~/.rbrelax."""
    env_dir = os.environ.get(ENV_CONFIG_DIR)
    if env_dir:
        return Path(env_dir).expanduser()
    return Path.home() / CONFIG_DIR_NAME


def shipped_config_names() -> list[str]:
    root = resources.files("src.configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_config(name_or_path: str) -> tuple[str, str]:
    """Find a config and return (source label, JSON text).

    A value naming an existing file, or containing a path separator or a
    ``.json`` suffix, is a path. Otherwise ``NAME.json`` is looked up in the
    user config directory, then among the shipped configs.

    Raises:
        ConfigError: If nothing matches (I/O error code)
    """
    candidate = Path(name_or_path).expanduser()
    looks_like_path = candidate.suffix == ".json" or os.sep in name_or_path or "/" in name_or_path
    if candidate.is_file() or looks_like_path:
        try:
            return str(candidate), candidate.read_text(encoding="utf-8")
        except OSError as e:
            err = ConfigError(f"Cannot read config file {candidate}: {e.strerror or e}")
            err.error_code = ExitCode.IO_ERROR
            raise err from e

    user_file = get_config_dir() / f"{name_or_path}.json"
    if user_file.is_file():
        return str(user_file), user_file.read_text(encoding="utf-8")

    shipped = resources.files("src.configs") / f"{name_or_path}.json"
    if shipped.is_file():
        return f"{name_or_path} (shipped)", shipped.read_text(encoding="utf-8")

    err = ConfigError(
        f"No config named '{name_or_path}' in {get_config_dir()} or the shipped configs "
        f"({', '.join(shipped_config_names())})"
    )
    err.error_code = ExitCode.IO_ERROR
    raise err


def load_run_config(name_or_path: str | None = None, *, strict: bool = True) -> RunConfig:
    """Load a named or file config; None gives the defaults (protocol A)."""
    if name_or_path is None:
        return parse_config({}, strict=strict, source="<defaults>")
    source, text = resolve_config(name_or_path)
    get_logger().debug(f"Config from {source}")
    return parse_config_text(text, strict=strict, source=source)


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def _section_dict(obj: Any) -> dict[str, Any]:
    return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def config_to_dict(config: RunConfig) -> dict[str, Any]:
    """JSON-serializable form accepted back by ``parse_config``."""
    exp = config.experiment
    return {
        "constants_file": config.constants_file,
        "seed": config.seed,
        "experiment": {
            "protocol": exp.protocol,
            "pump": _section_dict(exp.pump),
            "probe": _section_dict(exp.probe),
            "pump_duration_s": exp.pump_duration_s,
            "probe_pulse_s": exp.probe_pulse_s,
            "probe_duty_cycle": exp.probe_duty_cycle,
            "record_s": exp.record_s,
        },
        "cell": _section_dict(exp.cell),
        "relaxation": _section_dict(exp.relaxation),
        "spin_exchange": _section_dict(exp.spin_exchange),
        "ramsey": _section_dict(exp.ramsey),
        "sweep": _section_dict(config.sweep),
        "numerics": _section_dict(config.numerics),
        "output": _section_dict(config.output),
    }


def save_config(config: RunConfig, path: str | Path) -> Path:
    """Write the resolved config next to run outputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(config), f, indent=2)
        f.write("\n")
    return path


__all__ = [
    "CONFIG_DIR_NAME",
    "ENV_CONFIG_DIR",
    "UNIT_SUFFIXES",
    "PROTOCOL_LASERS",
    "PROTOCOL_POWERS_MW",
    "ConfigError",
    "ConfigParseError",
    "UnitMismatchError",
    "UnknownKeyError",
    "ConstraintError",
    "split_unit",
    "default_laser",
    "default_experiment",
    "experiment_for_protocol",
    "parse_config",
    "parse_config_text",
    "get_config_dir",
    "shipped_config_names",
    "resolve_config",
    "load_run_config",
    "config_to_dict",
    "save_config",
]
