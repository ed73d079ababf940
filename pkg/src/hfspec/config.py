"""Run configuration: INI-style files with strict schema validation.

A configuration collects everything a command needs: the spin system, CF
coefficients, hyperfine constants, temperature, synthesis grid, line shape,
isotope satellite settings and fit options.  Files are plain key = value
sections, hand-editable, with fractions like 7/2 accepted wherever
half-integers appear.  Unknown sections or keys are rejected (typos should
fail loudly, not silently fall back to defaults).

The bundled reference configuration and datasets live in the package's
``data`` directory; set HFSPEC_DATA_DIR to override their location.
"""

import configparser
import os
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

from .angular import SpinSystem
from .hamiltonian import CFParameters, HyperfineConstants
from .spectra import IsotopeConfig

SCHEMA_VERSION = 1

DATA_DIR_ENV = "HFSPEC_DATA_DIR"

REFERENCE_CONFIG = "reference.ini"
MEASURED_LINES = "hf_transitions.csv"
EXPECTED_LEVELS = "cf_levels_expected.csv"


class ConfigError(ValueError):
    """A configuration file failed to parse or validate."""


def parse_half_integer(text: str) -> float:
    """Accept '7/2', '3.5' or '8' style spin values."""
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse {text!r} as a (half-)integer") from exc


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse {text!r} as a boolean")


def _parse_transitions(text: str) -> list[tuple[int, int]]:
    out = []
    for item in text.replace(",", " ").split():
        out.append(parse_transition_label(item))
    return out


def parse_transition_label(label: str) -> tuple[int, int]:
    """'8.1-8.2' -> (1, 2): transition between levels of the ground manifold."""
    try:
        left, right = label.strip().split("-")
        ni = int(left.split(".")[1])
        nf = int(right.split(".")[1])
    except (ValueError, IndexError) as exc:
        raise ConfigError(
            f"cannot parse transition label {label!r}; expected like '8.1-8.2'"
        ) from exc
    return ni, nf


@dataclass
class RunConfig:
    """Validated configuration for the command-line tools."""

    system: SpinSystem = field(default_factory=SpinSystem)
    g_j: float = 1.25
    cf: CFParameters = field(
        default_factory=lambda: CFParameters(0.0, 0.0, 0.0, 0.0, 0.0)
    )
    hyperfine: HyperfineConstants = field(
        default_factory=lambda: HyperfineConstants(0.0, 0.0)
    )
    temperature: float = 3.5
    grid: tuple[float, float, float] | None = None
    isotope: IsotopeConfig = field(default_factory=lambda: IsotopeConfig(enabled=False))
    lineshape: str = "gaussian"
    fwhm: float = 0.009
    amplitude: float = 1.0
    transitions: list[tuple[int, int]] = field(default_factory=list)
    max_iterations: int = 200
    schema_version: int = SCHEMA_VERSION


# section -> key -> attribute path on RunConfig; values parsed per _PARSERS
_SCHEMA: dict[str, tuple[str, ...]] = {
    "meta": ("schema_version",),
    "system": ("j", "i", "g_j"),
    "cf": ("b20", "b40", "b44", "b4m4", "b60", "b64", "b6m4"),
    "hyperfine": ("a_j", "b_quad"),
    "conditions": ("temperature_k",),
    "grid": ("start_cm1", "stop_cm1", "step_cm1"),
    "isotope": ("enabled", "splitting_cm1", "satellite_ratio"),
    "lineshape": ("shape", "fwhm_cm1", "amplitude"),
    "transitions": ("include",),
    "fit": ("max_iterations",),
}


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a configuration file.

    Raises ConfigError with the offending file, section and key (or the
    parser's line diagnostics for syntax errors).
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle, source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key '{key}' in section [{section}]")

    def get(section: str, key: str, parse, default):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                return parse(raw)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(
                    f"{path}: bad value for {section}.{key}: {exc}"
                ) from exc
        return default

    version = get("meta", "schema_version", int, None)
    if version is None:
        raise ConfigError(f"{path}: missing required key meta.schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"{path}: unsupported schema_version {version} (expected {SCHEMA_VERSION})"
        )

    system = SpinSystem(
        j=get("system", "j", parse_half_integer, 8.0),
        i=get("system", "i", parse_half_integer, 3.5),
    )
    cf = CFParameters(
        b20=get("cf", "b20", float, 0.0),
        b40=get("cf", "b40", float, 0.0),
        b44=get("cf", "b44", float, 0.0),
        b60=get("cf", "b60", float, 0.0),
        b64=get("cf", "b64", float, 0.0),
        b6m4=get("cf", "b6m4", float, 0.0),
        b4m4=get("cf", "b4m4", float, 0.0),
    )
    hyperfine = HyperfineConstants(
        a_j=get("hyperfine", "a_j", float, 0.0),
        b_quad=get("hyperfine", "b_quad", float, 0.0),
    )
    grid = None
    if parser.has_section("grid"):
        grid = (
            get("grid", "start_cm1", float, None),
            get("grid", "stop_cm1", float, None),
            get("grid", "step_cm1", float, None),
        )
        if any(v is None for v in grid):
            raise ConfigError(f"{path}: section [grid] needs start_cm1, stop_cm1, step_cm1")
        if not (grid[1] > grid[0] and grid[2] > 0):
            raise ConfigError(f"{path}: invalid grid {grid}")
    isotope = IsotopeConfig(
        splitting=get("isotope", "splitting_cm1", float, 0.0098),
        satellite_ratio=get("isotope", "satellite_ratio", float, 0.33),
        enabled=get("isotope", "enabled", _parse_bool, False),
    )
    shape = get("lineshape", "shape", str, "gaussian").strip().lower()
    if shape not in ("gaussian", "lorentzian"):
        raise ConfigError(f"{path}: unknown line shape {shape!r}")

    return RunConfig(
        system=system,
        g_j=get("system", "g_j", parse_half_integer, 1.25),
        cf=cf,
        hyperfine=hyperfine,
        temperature=get("conditions", "temperature_k", float, 3.5),
        grid=grid,
        isotope=isotope,
        lineshape=shape,
        fwhm=get("lineshape", "fwhm_cm1", float, 0.009),
        amplitude=get("lineshape", "amplitude", float, 1.0),
        transitions=get("transitions", "include", _parse_transitions, []),
        max_iterations=get("fit", "max_iterations", int, 200),
        schema_version=version,
    )


def data_dir() -> Path:
    """Directory holding the bundled fixtures, overridable via HFSPEC_DATA_DIR."""
    override = os.environ.get(DATA_DIR_ENV)
    if override:
        return Path(override)
    return Path(str(resources.files("hfspec") / "data"))


def bundled_path(name: str) -> Path:
    path = data_dir() / name
    if not path.exists():
        raise FileNotFoundError(f"bundled data file not found: {path}")
    return path
