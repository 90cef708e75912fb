"""YAML run configuration shared by all CLI commands.

One file carries the root seed plus two sections, ``adaptation`` and
``simulator`` (with a nested ``shift`` block). Every field is optional and
falls back to the library default; unknown keys and wrongly typed values
are rejected with the full field path in the error message. CLI flags
override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .adaptation import AdaptationConfig
from .errors import ConfigParse
from .simulate import ShiftSpec, SyntheticSpec

_ADAPTATION_FIELDS = {
    "k": "int",
    "queries_per_batch": "int",
    "negatives_per_query": "int",
    "rounds": "optional_int",
    "learning_rate": "float",
    "score_scale": "float",
    "negative_source": "str",
    "adam_beta1": "float",
    "adam_beta2": "float",
    "adam_eps": "float",
    "weight_decay": "float",
    "uncertainty_variant": "str",
    "epsilon": "float",
    "method": "str",
    "differentiate_weights": "bool",
    "track_r1": "bool",
}

_SIMULATOR_FIELDS = {
    "n_identities": "int",
    "images_per_identity": "int",
    "texts_per_identity": "int",
    "dim": "int",
    "intra_noise_sigma": "float",
    "score_scale": "float",
}

_SHIFT_FIELDS = {
    "rotation_angle": "float",
    "n_planes": "int",
    "scale_jitter": "float",
    "bias_sigma": "float",
    "noise_sigma": "float",
}


@dataclass
class RunConfig:
    """Parsed configuration: one root seed plus the two component configs."""

    seed: int = 0
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    simulator: SyntheticSpec = field(default_factory=SyntheticSpec)


def _coerce(path: str, value, kind: str):
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigParse(f"{path}: expected integer, got {type(value).__name__}")
        return value
    if kind == "optional_int":
        if value is None:
            return None
        return _coerce(path, value, "int")
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigParse(f"{path}: expected number, got {type(value).__name__}")
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigParse(f"{path}: expected boolean, got {type(value).__name__}")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigParse(f"{path}: expected string, got {type(value).__name__}")
        return value
    raise AssertionError(kind)


def _section(raw, name: str, fields: dict[str, str]) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigParse(f"{name}: expected a mapping, got {type(raw).__name__}")
    out = {}
    for key, value in raw.items():
        if key not in fields:
            raise ConfigParse(f"{name}.{key}: unknown field")
        out[key] = _coerce(f"{name}.{key}", value, fields[key])
    return out


def parse_config(raw: dict | None) -> RunConfig:
    """Build a RunConfig from a parsed YAML mapping."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigParse(f"config root: expected a mapping, got {type(raw).__name__}")
    known = {"seed", "adaptation", "simulator"}
    for key in raw:
        if key not in known:
            raise ConfigParse(f"{key}: unknown section")

    seed = _coerce("seed", raw.get("seed", 0), "int")
    adapt_kwargs = _section(raw.get("adaptation"), "adaptation", _ADAPTATION_FIELDS)
    sim_raw = raw.get("simulator")
    shift_raw = None
    if isinstance(sim_raw, dict):
        sim_raw = dict(sim_raw)
        shift_raw = sim_raw.pop("shift", None)
    sim_kwargs = _section(sim_raw, "simulator", _SIMULATOR_FIELDS)
    shift_kwargs = _section(shift_raw, "simulator.shift", _SHIFT_FIELDS)

    config = RunConfig(
        seed=seed,
        adaptation=AdaptationConfig(seed=seed, **adapt_kwargs),
        simulator=SyntheticSpec(
            seed=seed, shift=ShiftSpec(**shift_kwargs), **sim_kwargs
        ),
    )
    try:
        config.adaptation.validate()
        config.simulator.validate()
    except ValueError as exc:
        raise ConfigParse(str(exc)) from exc
    return config


def load_config(path: str | Path | None) -> RunConfig:
    """Load a YAML config file; ``None`` yields all defaults."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParse(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigParse(f"invalid YAML in {path}: {exc}") from exc
    return parse_config(raw)
