"""Run configuration: built-in defaults, a TOML file, then ``--set`` overrides."""

from __future__ import annotations

import copy
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .grower import DEFAULT_MAX_CHUNK_SIZE
from .learner import ForestConfig
from .synth import SynthConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict] = {
    "synth": SynthConfig(adjacency_pressure=1.0).to_dict(),
    "pipeline": {
        "n_train": 40,
        "n_test": 200,
        # test scenes use indices from here on, so they never repeat training scenes
        "test_offset": 100_000,
        "k": 5,
        "seed_interval": 32,
        "max_chunk_size": DEFAULT_MAX_CHUNK_SIZE,
        "grower_rows_per_step": 60,
        "list_rows_per_round": 300,
        # "pool" or "exact"; exact needs scenes of at most 16 superpixels
        "oracle_mode": "pool",
        "workers": 1,
    },
    "grower_forest": asdict(ForestConfig()),
    "list_forest": asdict(ForestConfig(seed=1)),
    "verify": {
        "seed": 0,
        "hungarian_trials": 1000,
        "hungarian_max_size": 6,
        "theorem1_scenes": 1000,
        "theorem1_max_chunks": 12,
        "theorem1_max_k": 4,
        "theorem2_scenes": 200,
        "theorem3_scenes": 500,
        "theorem3_trials": 20,
        "theorem3_eps": [0.01, 0.05, 0.1],
        "corollary_etas": [0.5, 0.25],
        "corollary_noise": 0.1,
        "iou_trials": 100_000,
    },
}


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _merge(cfg: dict, section: str, key: str, value, source: str) -> None:
    if section not in cfg:
        raise ConfigError(f"{source}: unknown section [{section}]")
    if key not in cfg[section]:
        raise ConfigError(f"{source}: unknown key {section}.{key}")
    default = DEFAULTS[section][key]
    if isinstance(default, bool) != isinstance(value, bool) or (
            isinstance(default, (int, float)) and not isinstance(value, (int, float))):
        raise ConfigError(f"{source}: {section}.{key} expects {type(default).__name__}, got {value!r}")
    if isinstance(default, float) and isinstance(value, int):
        value = float(value)
    cfg[section][key] = value


def load_config(path: str | Path | None = None, overrides: Sequence[str] = ()) -> dict:
    """Defaults, updated by the TOML file at ``path``, then ``section.key=value`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            data = tomllib.loads(Path(path).read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section, table in data.items():
            if not isinstance(table, dict):
                raise ConfigError(f"{path}: top-level key {section!r} must be a table")
            for key, value in table.items():
                _merge(cfg, section, key, value, str(path))
    for item in overrides:
        name, sep, raw = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        _merge(cfg, section, key, _parse_value(raw.strip()), "--set")
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    try:
        synth_config(cfg)
        ForestConfig(**cfg["grower_forest"])
        ForestConfig(**cfg["list_forest"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    p = cfg["pipeline"]
    for key in ("n_train", "n_test", "k", "seed_interval", "max_chunk_size", "workers"):
        if p[key] < 1:
            raise ConfigError(f"pipeline.{key} must be positive")
    if p["oracle_mode"] not in ("pool", "exact"):
        raise ConfigError(f"pipeline.oracle_mode must be 'pool' or 'exact', got {p['oracle_mode']!r}")
    for name in ("grower_forest", "list_forest"):
        f = cfg[name]
        if f["n_trees"] < 1 or f["max_depth"] < 0 or f["min_samples_leaf"] < 1 or f["max_bins"] < 1:
            raise ConfigError(f"{name}: tree counts and sizes must be positive")


def synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig.from_dict(cfg["synth"])


def forest_config(cfg: dict, name: str) -> ForestConfig:
    return ForestConfig(**cfg[name])


def verify_settings(cfg: dict) -> dict[str, dict]:
    v = cfg["verify"]
    seed = v["seed"]
    return {
        "hungarian": {"trials": v["hungarian_trials"], "max_size": v["hungarian_max_size"], "seed": seed},
        "theorem1": {"n_scenes": v["theorem1_scenes"], "max_chunks": v["theorem1_max_chunks"],
                     "max_k": v["theorem1_max_k"], "seed": seed},
        "theorem2": {"n_scenes": v["theorem2_scenes"], "seed": seed},
        "theorem3": {"n_scenes": v["theorem3_scenes"], "trials": v["theorem3_trials"],
                     "eps": tuple(v["theorem3_eps"]), "seed": seed},
        "corollary": {"n_scenes": v["theorem3_scenes"], "etas": tuple(v["corollary_etas"]),
                      "noise": v["corollary_noise"], "seed": seed},
        "iou": {"trials": v["iou_trials"], "seed": seed},
    }


def write_effective(cfg: dict, out_dir: str | Path) -> Path:
    """Echo the effective configuration next to a command's outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.json"
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return path
