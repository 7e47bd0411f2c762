"""Structured configuration: YAML file + CLI overrides -> TrainConfig.

Every training hyperparameter is addressable by a nested key; command-line
flags override file values, which override the built-in defaults.
"""

import copy
import os
import tempfile
from pathlib import Path

import yaml

from .errors import ConfigError
from .losses import LossWeights
from .training import TrainConfig

CACHE_ENV_VAR = "DEMORPH_LAB_CACHE"

DEFAULTS = {
    "seed": None,
    "train": {
        "manifest": None,
        "out_dir": "runs/demorph",
        "epochs": 300,
        "learning_rate": 1e-4,
        "adam_betas": [0.9, 0.999],
        "batch_size": 8,
        "image_size": 256,
        "checkpoint_every": 25,
        "depth": None,
        "base_width": None,
        "embed_dim": 128,
        "comparator_seed": 0,
        "deterministic": False,
        "auto_scale_beta_b": False,
        "device": "cpu",
        "weights": {
            "beta_c": 1e-3,
            "beta_b": 1e12,
            "beta_m": 1e-3,
            "warmup_epochs": 10,
        },
    },
    "split": {"train_fraction": 0.7},
    "eval": {"fmr": 0.10},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None) -> dict:
    """Defaults merged with an optional YAML config file."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        loaded = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(loaded) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"{path}: unknown top-level key(s): {sorted(unknown)}")
    return _deep_merge(DEFAULTS, loaded)


def apply_overrides(cfg: dict, **overrides) -> dict:
    """Apply non-None CLI values onto dotted config keys."""
    cfg = copy.deepcopy(cfg)
    mapping = {
        "seed": ("seed",),
        "manifest": ("train", "manifest"),
        "out": ("train", "out_dir"),
        "epochs": ("train", "epochs"),
        "batch_size": ("train", "batch_size"),
        "image_size": ("train", "image_size"),
        "fmr": ("eval", "fmr"),
    }
    for name, value in overrides.items():
        if value is None:
            continue
        node = cfg
        keys = mapping[name]
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = value
    return cfg


def build_train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    seed = cfg.get("seed")
    try:
        weights = LossWeights(**t["weights"])
        return TrainConfig(
            train_manifest=t["manifest"],
            out_dir=t["out_dir"],
            epochs=int(t["epochs"]),
            learning_rate=float(t["learning_rate"]),
            adam_betas=tuple(t["adam_betas"]),
            batch_size=int(t["batch_size"]),
            image_size=int(t["image_size"]),
            weights=weights,
            seed=int(seed) if seed is not None else 0,
            checkpoint_every=int(t["checkpoint_every"]),
            depth=t["depth"],
            base_width=t["base_width"],
            embed_dim=int(t["embed_dim"]),
            comparator_seed=int(t["comparator_seed"]),
            deterministic=bool(t["deterministic"]),
            auto_scale_beta_b=bool(t["auto_scale_beta_b"]),
            device=t["device"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training configuration: {exc}") from exc


def cache_dir() -> Path:
    """Directory for intermediate artifacts.

    Honors DEMORPH_LAB_CACHE when set; otherwise a per-user temp location.
    Commands only write intermediates here when the variable is set
    explicitly, keeping all default side effects inside --out.
    """
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        path = Path(env)
    else:
        path = Path(tempfile.gettempdir()) / "demorphlab_cache"
    path.mkdir(parents=True, exist_ok=True)
    return path


def cache_enabled() -> bool:
    return bool(os.environ.get(CACHE_ENV_VAR))
