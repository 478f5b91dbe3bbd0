"""Run configuration: JSON document with model/schedule/train/data/metrics
sections, schema-validated with unknown keys rejected."""

from __future__ import annotations

import json

from .errors import ConfigError
from .mwnet import ModelConfig
from .training import TrainConfig

DEFAULTS = {
    "model": {
        "d": 64,
        "d_t": 64,
        "blocks": 2,
        "heads": 4,
        "groups": 4,
        "ffn_mult": 4,
        "layout": "channel_first",
        "max_len": 1000,
        "d_c": 32,
        "dtype": "float32",
        "init_seed": 0,
    },
    "schedule": {
        "t_diff": 1000,
        "beta_start": 0.0001,
        "beta_end": 0.02,
        "target": "x0",
    },
    "train": {
        "stage": 1,
        "lr": 0.0002,
        "batch": 16,
        "epochs": 400,
        "seed": 0,
    },
    "data": {
        "dir": None,
        "n": 256,
        "frames": 48,
        "fps": 20.0,
        "with_control": False,
        "seed": 0,
    },
    "metrics": {
        "diversity_pairs": 300,
        "multimodality_replications": 10,
        "bas_sigma": 3.0,
        "smooth_window": 5,
        "contact_threshold": 0.002,
        "seed": 0,
    },
}

_TYPES = {
    ("model", "layout"): str,
    ("model", "dtype"): str,
    ("schedule", "target"): str,
    ("data", "dir"): (str, type(None)),
    ("data", "with_control"): bool,
}


def _check_value(section: str, key: str, value):
    expected = _TYPES.get((section, key))
    if expected is not None:
        if not isinstance(value, expected):
            raise ConfigError(f"{section}.{key}: expected {expected}, got {type(value).__name__}")
        return value
    default = DEFAULTS[section][key]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key}: expected a boolean")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{section}.{key}: expected an integer")
        value = int(value)
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key}: expected a number")
        value = float(value)
    return value


def validate_config(doc: dict) -> dict:
    """Merge a partial document over the defaults, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    merged = {s: dict(v) for s, v in DEFAULTS.items()}
    for section, body in doc.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be an object")
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            merged[section][key] = _check_value(section, key, value)
    if merged["schedule"]["target"] not in ("x0", "eps"):
        raise ConfigError("schedule.target must be 'x0' or 'eps'")
    return merged


def load_config(path=None) -> dict:
    if path is None:
        return validate_config({})
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return validate_config(doc)


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(**cfg["model"])


def train_config(cfg: dict, stage: int | None = None) -> TrainConfig:
    t = cfg["train"]
    s = cfg["schedule"]
    return TrainConfig(
        stage=stage if stage is not None else t["stage"],
        lr=t["lr"],
        batch=t["batch"],
        epochs=t["epochs"],
        target=s["target"],
        seed=t["seed"],
        t_diff=s["t_diff"],
        beta_start=s["beta_start"],
        beta_end=s["beta_end"],
    )
