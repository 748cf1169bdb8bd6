"""Flat, typed experiment configuration.

A configuration is a JSON object with one level of keys. Every experiment
has a table of defaults; a key that is not in the table is an error, and
a value must have the same type as its default (integers are accepted
where a float is expected).
"""

from __future__ import annotations

import json
import os

COMMON = {
    "experiment": "",
    "seed": 0,
    "n_chains": 64,
    "n_steps": 1000,
    "warmup_fraction": 0.5,
    "n_projections": 128,
    "metric_max_samples": 4000,
    "reference_oversize": 10,
    "target_accept": 0.75,
    "step_size_init": 0.1,
    "output_dir": "",
    "record_wall_time": False,
}

SPECIFIC = {
    "three_flows": {
        "dim": 16,
        "t_grid": [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0],
        "samplers": ["neural_is", "imh", "isir", "neutra_mala", "neutra_ess", "neutraflow"],
        "n_proposals": 60,
        "n_local": 10,
        "n_steps": 1100,
    },
    "funnel_sweep": {
        "dim": 16,
        "a": 3.0,
        "b": 1.0,
        "beta_grid": [0.25, 0.5, 1.0, 2.0, 4.0],
        "samplers": ["neural_is", "imh", "isir", "neutra_mala", "neutra_ess", "neutraflow"],
        "n_proposals": 60,
        "n_local": 10,
        "n_steps": 1100,
    },
    "mixture_modes": {
        "dims": [2, 4, 8, 16],
        "a": 3.0,
        "samplers": ["isir", "neutra_mala", "neutra_ess"],
        "proposal": "trained",
        "flow_file": "",
        "n_proposals": 20,
        "flow_blocks": 4,
        "flow_hidden": 64,
        "train_iters": 2500,
        "train_batch": 512,
        "train_lr": 3e-3,
        "train_lr_decay": 0.5,
        "train_patience": 300,
    },
    "banana_scaling": {
        "dims": [2, 4, 8, 16, 32],
        "a": 10.0,
        "b": 0.02,
        "corruptions": [1.0, 1.1],
        "samplers": ["neural_is", "imh", "isir", "neutra_mala", "neutraflow"],
        "n_proposals": 60,
        "n_local": 10,
        "n_steps": 1024,
    },
    "two_mode_1d": {
        "L_grid": [1.0, 2.0, 4.0, 8.0, 12.0],
        "sigma": 1.0,
        "n_grid": 512,
        "grid_width": 8.0,
        "epsilon": 0.08,
        "mala_budget": 8192,
        "imh_budget": 8192,
    },
    "phi4": {
        "dim": 16,
        "a_coupling": 0.1,
        "beta": 20.0,
        "samplers": ["isir", "neutra_mala", "neutra_ess"],
        "n_proposals": 60,
        "n_steps": 512,
        "flow_file": "",
        "flow_blocks": 4,
        "flow_hidden": 32,
        "train_iters": 3000,
        "train_batch": 256,
        "train_lr": 1e-3,
        "train_lr_decay": 0.5,
        "train_patience": 300,
        "pool_chains": 64,
        "pool_steps": 2000,
        "step_size_init": 1e-3,
        "base_check_samples": 100000,
    },
    "bound_study": {
        "lambda_grid": [-0.01, -0.005, -0.001, 0.001, 0.005, 0.01],
        "epsilon": 0.1,
        "start_halfwidth": 1.0,
        "n_grid": 512,
        "budget": 2000,
    },
}

EXPERIMENTS = tuple(SPECIFIC)
OUTPUT_ENV = "TRANSPORT_SAMPLERS_OUTPUT"


class ConfigError(ValueError):
    pass


def defaults(experiment: str) -> dict:
    if experiment not in SPECIFIC:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    cfg = dict(COMMON)
    cfg.update(SPECIFIC[experiment])
    cfg["experiment"] = experiment
    return cfg


def _type_ok(value, default) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, list):
        return isinstance(value, list)
    return isinstance(value, type(default))


def resolve(record: dict) -> dict:
    """Merge a raw record over the experiment defaults and validate it."""
    if "experiment" not in record:
        raise ConfigError("configuration needs an 'experiment' key")
    cfg = defaults(record["experiment"])
    for key, value in record.items():
        if key not in cfg:
            raise ConfigError(f"unknown key {key!r} for experiment {record['experiment']!r}")
        if not _type_ok(value, cfg[key]):
            raise ConfigError(f"key {key!r} expects {type(cfg[key]).__name__}, got {value!r}")
        cfg[key] = float(value) if isinstance(cfg[key], float) else value
    if cfg["n_chains"] < 1:
        raise ConfigError("n_chains must be >= 1")
    if cfg["n_steps"] < 2 or cfg["n_steps"] % 2:
        raise ConfigError("n_steps must be even and >= 2")
    if not 0.0 <= cfg["warmup_fraction"] < 1.0:
        raise ConfigError("warmup_fraction must lie in [0, 1)")
    if cfg.get("flow_file") and not os.path.exists(cfg["flow_file"]):
        raise ConfigError(f"flow file {cfg['flow_file']!r} does not exist")
    if "n_proposals" in cfg and cfg["n_proposals"] < 2:
        raise ConfigError("n_proposals must be >= 2")
    if "n_local" in cfg and cfg["n_local"] < 1:
        raise ConfigError("n_local must be >= 1")
    return cfg


def load(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        record = json.load(fh)
    if not isinstance(record, dict):
        raise ConfigError("configuration file must hold a JSON object")
    return resolve(record)


def output_dir(cfg: dict, override: str | None = None) -> str:
    return override or cfg.get("output_dir") or os.environ.get(OUTPUT_ENV) or "results"
