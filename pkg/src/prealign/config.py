"""Scenario configuration: INI-style files plus command-line overrides."""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

from .classical import EnsembleSpec
from .core import (CS2, JParity, KickPulse, MolecularSpecies, Polarization, SpeciesError, ThermalSpec,
                   get_species)
from .deflection import DEFAULT_LEVELS, DeflectingBeam, ScatteringGeometry
from .rng import RngSpec

DEFAULT_SEED = 20240601
DEFAULT_BINS = 200

# section -> key -> parser
SCHEMA = {
    "species": {"name": str, "file": str, "alpha_parallel": float, "alpha_perp": float,
                "B": float, "mass": float, "j_parity": str},
    "thermal": {"temperature": float, "j_thermal": float},
    "kick": {"strength": float, "axis": str, "intensity": float, "fwhm_ps": float},
    "beam": {"intensity": float, "waist_um": float, "tau_ns": float},
    "geometry": {"vx": float, "impact_um": float},
    "ensemble": {"samples": int, "seed": int, "workers": int},
    "output": {"dir": str, "bins": int},
    "strong": {"mode": str, "levels": int},
    "quantum": {"j_max": int},
    "asymptotics": {"p_list": "list", "jt_list": "list"},
}


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the offending field."""


def _parse_value(section, key, raw):
    kind = SCHEMA[section][key]
    text = str(raw).strip()
    try:
        if kind == "list":
            values = [float(x) for x in text.replace(",", " ").split()]
            if not values:
                raise ValueError("empty list")
            return values
        if kind is int:
            return int(text)
        if kind is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError("not finite")
            return value
        return text
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r} ({exc})") from None


def read_config(path) -> dict:
    """Parse a scenario file into {section: {key: value}} with schema checks."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    out: dict = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]; expected one of {', '.join(SCHEMA)}")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            out.setdefault(section, {})[key] = _parse_value(section, key, raw)
    return out


def merge(base: dict, overrides: dict) -> dict:
    merged = {s: dict(v) for s, v in base.items()}
    for (section, key), value in overrides.items():
        if value is None:
            continue
        merged.setdefault(section, {})[key] = _parse_value(section, key, value) if isinstance(value, str) \
            else value
    return merged


@dataclass
class ScenarioConfig:
    species: MolecularSpecies
    thermal: ThermalSpec
    pulse: KickPulse | None
    beam: DeflectingBeam
    geometry: ScatteringGeometry
    ensemble: EnsembleSpec
    out: Path
    bins: int
    mode: str
    levels: int
    workers: int
    j_max: int | None
    p_list: list = field(default_factory=list)
    jt_list: list = field(default_factory=list)
    echo: dict = field(default_factory=dict)


def _require_positive(section, key, value):
    if not value > 0:
        raise ConfigError(f"[{section}] {key}: must be positive, got {value}")
    return value


def _species(sec: dict) -> MolecularSpecies:
    inline = {"alpha_parallel", "alpha_perp", "B", "mass"}
    given = inline & sec.keys()
    try:
        if given:
            if given != inline:
                raise ConfigError(f"[species] inline record needs all of {sorted(inline)}; missing "
                                  f"{sorted(inline - given)}")
            return MolecularSpecies(sec.get("name", "custom"), sec["alpha_parallel"], sec["alpha_perp"],
                                    sec["B"], sec["mass"], JParity(sec.get("j_parity", "all")))
        if "name" in sec or "file" in sec:
            return get_species(sec.get("name", "CS2"), sec.get("file"))
    except (SpeciesError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[species] {exc}") from None
    return CS2


def build_scenario(values: dict, default_samples: int) -> ScenarioConfig:
    """Validate a merged {section: {key: value}} mapping into typed objects."""
    get = lambda s, k, d=None: values.get(s, {}).get(k, d)  # noqa: E731
    species = _species(values.get("species", {}))

    T, jt = get("thermal", "temperature"), get("thermal", "j_thermal")
    if T is not None and jt is not None:
        raise ConfigError("[thermal] give temperature or j_thermal, not both")
    try:
        if jt is not None:
            thermal = ThermalSpec(j_thermal=jt)
        else:
            thermal = ThermalSpec(temperature=5.0 if T is None else T)
    except ValueError as exc:
        raise ConfigError(f"[thermal] {exc}") from None

    kick = values.get("kick", {})
    pulse = None
    if kick:
        try:
            axis = Polarization.parse(kick.get("axis", "z"))
        except ValueError as exc:
            raise ConfigError(f"[kick] axis: {exc}") from None
        if "strength" in kick and ("intensity" in kick or "fwhm_ps" in kick):
            raise ConfigError("[kick] give strength or intensity + fwhm_ps, not both")
        try:
            if "strength" in kick:
                if kick["strength"] < 0:
                    raise ConfigError(f"[kick] strength: must be >= 0, got {kick['strength']}")
                pulse = KickPulse(kick_strength=kick["strength"], polarization=axis) if kick["strength"] else None
            elif "intensity" in kick or "fwhm_ps" in kick:
                if "intensity" not in kick or "fwhm_ps" not in kick:
                    raise ConfigError("[kick] intensity and fwhm_ps must be given together")
                pulse = KickPulse(peak_intensity=_require_positive("kick", "intensity", kick["intensity"]),
                                  fwhm=_require_positive("kick", "fwhm_ps", kick["fwhm_ps"]) * 1e-12,
                                  polarization=axis)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"[kick] {exc}") from None

    intensity = get("beam", "intensity", 3e9)
    if intensity < 0:
        raise ConfigError(f"[beam] intensity: must be >= 0, got {intensity}")
    beam = DeflectingBeam(intensity, _require_positive("beam", "waist_um", get("beam", "waist_um", 7.0)) * 1e-6,
                          _require_positive("beam", "tau_ns", get("beam", "tau_ns", 14.0)) * 1e-9)
    geometry = ScatteringGeometry(_require_positive("geometry", "vx", get("geometry", "vx", 500.0)),
                                  get("geometry", "impact_um", -4.0) * 1e-6)

    samples = _require_positive("ensemble", "samples", get("ensemble", "samples", default_samples))
    seed = get("ensemble", "seed", DEFAULT_SEED)
    try:
        rng = RngSpec(seed)
    except ValueError as exc:
        raise ConfigError(f"[ensemble] seed: {exc}") from None
    workers = _require_positive("ensemble", "workers", get("ensemble", "workers", 1))

    bins = get("output", "bins", DEFAULT_BINS)
    if bins < 2:
        raise ConfigError(f"[output] bins: need at least 2, got {bins}")
    mode = get("strong", "mode", "weak")
    if mode not in ("weak", "strong"):
        raise ConfigError(f"[strong] mode: must be weak or strong, got {mode!r}")
    levels = _require_positive("strong", "levels", get("strong", "levels", DEFAULT_LEVELS))
    j_max = get("quantum", "j_max")
    if j_max is not None:
        _require_positive("quantum", "j_max", j_max)

    p_list = get("asymptotics", "p_list", [10.0, 25.0, 50.0])
    jt_list = get("asymptotics", "jt_list", [5.0])
    for name, seq in (("p_list", p_list), ("jt_list", jt_list)):
        if any(not x > 0 for x in seq):
            raise ConfigError(f"[asymptotics] {name}: values must be positive")

    return ScenarioConfig(species, thermal, pulse, beam, geometry,
                          EnsembleSpec(samples, thermal, rng), Path(get("output", "dir", "out")),
                          bins, mode, levels, workers, j_max, p_list, jt_list,
                          {s: dict(v) for s, v in sorted(values.items())})
