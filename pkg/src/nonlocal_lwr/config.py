"""Flat ``key = value`` scenario files and the built-in presets.

Example::

    # bulk of stopped cars released behind a leader at speed 0.5
    velocity.kind = linear
    kernel.kind = constant
    eta = 1
    vbar = 0.5
    b = 0
    grid.dx = 0.005
    grid.t_end = 20
    init.segments = (0, 1.0), (inf, 0.5)
    output.cadence = 0.1
"""

from __future__ import annotations

import math
import re
from pathlib import Path
from typing import Mapping, Union

from .errors import ConfigurationError
from .model import Kernel, VelocityModel
from .scenario import InitialProfile, ScenarioConfig

#: every accepted key with its default; ``None`` marks required / automatic entries
SCHEMA = {
    "scenario": "custom",
    "model": "macro",
    "velocity.kind": "linear",
    "velocity.vmax": 1.0,
    "velocity.rho_max": 1.0,
    "velocity.exponent": 1.0,
    "kernel.kind": "constant",
    "eta": 1.0,
    "vbar": None,
    "b": 0.0,
    "grid.dx": 5e-3,
    "grid.t_end": 20.0,
    "grid.cfl": 1.0,
    "grid.x_left": "auto",
    "grid.x_right": "auto",
    "init.segments": None,
    "output.cadence": 0.1,
    "micro.h": 0.01,
}

_FIG1 = {
    "velocity.kind": "linear", "velocity.vmax": 1.0, "velocity.rho_max": 1.0,
    "eta": 1.0, "vbar": 0.5, "b": 0.0, "grid.dx": 5e-3, "grid.t_end": 20.0, "grid.cfl": 1.0,
    "init.segments": "(0, 1.0), (inf, 0.5)", "output.cadence": 0.1,
}

PRESETS = {
    "fig1-const": {**_FIG1, "scenario": "fig1-const", "kernel.kind": "constant"},
    "fig1-lin": {**_FIG1, "scenario": "fig1-lin", "kernel.kind": "linear"},
    "fig1-conc": {**_FIG1, "scenario": "fig1-conc", "kernel.kind": "concave"},
    "fig2": {**_FIG1, "scenario": "fig2", "kernel.kind": "constant",
             "init.segments": "(-0.5, 0.01), (0, 0.35), (inf, 0.5)", "output.cadence": 0.01},
    # fine cadence so single vehicles leaving the window show up as isolated jumps
    "fig3-micro": {**_FIG1, "scenario": "fig3-micro", "model": "micro", "kernel.kind": "constant",
                   "micro.h": 0.01, "output.cadence": 0.001},
}

_LINE = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*=\s*(.*?)\s*$")
_PAIR = re.compile(r"\(\s*([^,()]+?)\s*,\s*([^,()]+?)\s*\)")


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into a dict of raw strings.

    ``#`` starts a comment.  Raises :class:`ConfigurationError` carrying the
    line number on malformed lines, unknown keys or duplicates.
    """
    out = {}
    lines = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if m is None:
            raise ConfigurationError(f"expected 'key = value', got {raw.strip()!r}", line=n)
        key, value = m.group(1), m.group(2)
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown key {key!r}", line=n)
        if key in out:
            raise ConfigurationError(f"duplicate key {key!r} (first on line {lines[key]})", line=n)
        if value == "":
            raise ConfigurationError(f"empty value for {key!r}", line=n)
        out[key] = value
        lines[key] = n
    out["__lines__"] = lines
    return out


def parse_segments(value: Union[str, list]) -> list:
    if not isinstance(value, str):
        return [(float(a), float(b)) for a, b in value]
    pairs = _PAIR.findall(value)
    rest = _PAIR.sub("", value).replace(",", "").strip()
    if not pairs or rest:
        raise ConfigurationError(f"init.segments must be '(x_upper, value), ...', got {value!r}")
    try:
        return [(float(a), float(b)) for a, b in pairs]
    except ValueError as exc:
        raise ConfigurationError(f"bad number in init.segments: {exc}") from exc


def format_segments(segments) -> str:
    return ", ".join(f"({_fmt(a)}, {_fmt(b)})" for a, b in segments)


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def _number(mapping, key, lines):
    value = mapping[key]
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key} must be a number, got {value!r}",
                                 line=lines.get(key)) from None


def config_from_mapping(mapping: Mapping) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from a flat mapping (strings or numbers)."""
    mapping = dict(mapping)
    lines = mapping.pop("__lines__", {})
    unknown = set(mapping) - set(SCHEMA)
    if unknown:
        raise ConfigurationError(f"unknown keys: {sorted(unknown)}")
    merged = {**SCHEMA, **mapping}
    for key in ("vbar", "init.segments"):
        if merged[key] is None:
            raise ConfigurationError(f"missing required key {key!r}")

    vkind = str(merged["velocity.kind"]).lower()
    vmax = _number(merged, "velocity.vmax", lines)
    rho_max = _number(merged, "velocity.rho_max", lines)
    if vkind == "linear":
        velocity = VelocityModel.linear(vmax, rho_max)
    elif vkind == "power":
        velocity = VelocityModel.power(_number(merged, "velocity.exponent", lines), vmax, rho_max)
    else:
        raise ConfigurationError(f"velocity.kind must be 'linear' or 'power', got {vkind!r}",
                                 line=lines.get("velocity.kind"))
    eta = _number(merged, "eta", lines)
    try:
        kernel = Kernel.from_name(str(merged["kernel.kind"]), eta)
    except ConfigurationError as exc:
        raise ConfigurationError(str(exc), line=lines.get("kernel.kind")) from None
    try:
        profile = InitialProfile.from_segments(parse_segments(merged["init.segments"]))
    except ConfigurationError as exc:
        raise ConfigurationError(str(exc), line=lines.get("init.segments")) from None

    def opt(key):
        v = merged[key]
        return None if str(v).lower() == "auto" else _number(merged, key, lines)

    model = str(merged["model"]).lower()
    return ScenarioConfig(
        velocity=velocity, kernel=kernel, vbar=_number(merged, "vbar", lines),
        b=_number(merged, "b", lines), profile=profile, dx=_number(merged, "grid.dx", lines),
        t_end=_number(merged, "grid.t_end", lines), cfl_factor=_number(merged, "grid.cfl", lines),
        cadence=_number(merged, "output.cadence", lines), x_left=opt("grid.x_left"),
        x_right=opt("grid.x_right"), model=model, h=_number(merged, "micro.h", lines),
        name=str(merged["scenario"]),
    )


def load_config(source: Union[str, Path, Mapping]) -> ScenarioConfig:
    """Load and validate a preset name, a config file path or a flat mapping."""
    if isinstance(source, Mapping):
        cfg = config_from_mapping(source)
    elif str(source) in PRESETS:
        cfg = config_from_mapping(PRESETS[str(source)])
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigurationError(
                f"{source!s} is neither a preset ({', '.join(PRESETS)}) nor a config file")
        mapping = parse_config_text(path.read_text())
        mapping.setdefault("scenario", path.stem)
        cfg = config_from_mapping(mapping)
    cfg.validate()
    return cfg


def source_mapping(source: Union[str, Path, Mapping]) -> dict:
    """Raw flat mapping behind ``source`` (used to apply sweep overrides)."""
    if isinstance(source, Mapping):
        return dict(source)
    if str(source) in PRESETS:
        return dict(PRESETS[str(source)])
    path = Path(source)
    if not path.is_file():
        raise ConfigurationError(f"{source!s} is neither a preset nor a config file")
    mapping = parse_config_text(path.read_text())
    mapping.pop("__lines__", None)
    mapping.setdefault("scenario", path.stem)
    return mapping


def resolved_mapping(cfg: ScenarioConfig) -> dict:
    """All keys with defaults materialized, including the automatic grid bounds."""
    vp = cfg.velocity.params
    grid = cfg.grid()
    return {
        "scenario": cfg.name,
        "model": cfg.model,
        "velocity.kind": vp.get("kind", cfg.velocity.kind),
        "velocity.vmax": vp.get("vmax", cfg.velocity.v0),
        "velocity.rho_max": cfg.velocity.rho_max,
        "velocity.exponent": vp.get("exponent", 1.0),
        "kernel.kind": cfg.kernel.kind,
        "eta": cfg.eta,
        "vbar": cfg.vbar,
        "b": cfg.b,
        "grid.dx": cfg.dx,
        "grid.t_end": cfg.t_end,
        "grid.cfl": cfg.cfl_factor,
        "grid.x_left": grid.x_left,
        "grid.x_right": grid.x_right,
        "init.segments": format_segments(cfg.profile.segments),
        "output.cadence": cfg.cadence,
        "micro.h": cfg.h,
    }


def format_config(mapping: Mapping) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in mapping.items() if k != "__lines__")
