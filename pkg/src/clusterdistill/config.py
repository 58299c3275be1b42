"""Experiment configuration: profiles, YAML overrides, strict validation.

Two profiles exist. "paper" carries the reference hyperparameters for the
full-size encoder (512 clusters, learning rates 0.005 / 0.007 / 0.001).
"desk" shrinks every dimension by 8 and the cluster count to 8 so the whole
pipeline runs on a laptop CPU in minutes. A config file only needs to state
the values it overrides; unknown keys, wrong types, and out-of-range values
are rejected rather than ignored.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import yaml

from .distill import DistillConfig
from .encoder import EncoderConfig, desk_encoder_config, paper_encoder_config
from .errors import ConfigError
from .pretrain import PretrainConfig
from .probe import ProbeConfig

PROFILES = ("paper", "desk")
DEFAULT_SEED = 7


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic"
    classes: int = 4
    train_per_class: int = 64
    test_per_class: int = 16
    path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("synthetic", "wav_dir"):
            raise ConfigError(f"dataset kind must be synthetic or wav_dir, got {self.kind!r}")
        if self.kind == "wav_dir" and not self.path:
            raise ConfigError("dataset kind wav_dir requires a path")
        if self.classes < 2:
            raise ConfigError("dataset needs at least two classes")
        if self.train_per_class < 1 or self.test_per_class < 0:
            raise ConfigError("per-class counts out of range")


@dataclass(frozen=True)
class ExperimentConfig:
    profile: str
    seed: int
    dataset: DatasetSpec
    pretrain: PretrainConfig
    distill: DistillConfig
    probe: ProbeConfig

    def encoder_config(self) -> EncoderConfig:
        if self.profile == "paper":
            return paper_encoder_config(class_count=self.dataset.classes,
                                        prototype_count=self.pretrain.clusters)
        return desk_encoder_config(class_count=self.dataset.classes,
                                   prototype_count=self.pretrain.clusters)


_PROFILE_DEFAULTS: dict[str, dict] = {
    "paper": {
        "dataset": {"kind": "synthetic", "classes": 10, "train_per_class": 64,
                    "test_per_class": 16, "path": None},
        "pretrain": {"clusters": 512, "lr": 0.005, "batch_size": 512,
                     "epochs": 100, "noise_std": 0.05},
        "distill": {"alpha": 0.7, "beta": 0.003, "lr": 0.007, "batch_size": 512,
                    "epochs": 50},
        "probe": {"lr": 0.001, "batch_size": 32, "epochs": 50},
    },
    "desk": {
        "dataset": {"kind": "synthetic", "classes": 4, "train_per_class": 64,
                    "test_per_class": 16, "path": None},
        "pretrain": {"clusters": 8, "lr": 0.02, "batch_size": 32,
                     "epochs": 5, "noise_std": 0.05},
        "distill": {"alpha": 0.7, "beta": 0.003, "lr": 0.02, "batch_size": 32,
                    "epochs": 10},
        "probe": {"lr": 0.05, "batch_size": 32, "epochs": 50},
    },
}

_SECTION_TYPES: dict[str, dict[str, type | tuple]] = {
    "dataset": {"kind": str, "classes": int, "train_per_class": int,
                "test_per_class": int, "path": (str, type(None))},
    "pretrain": {"clusters": int, "lr": float, "batch_size": int,
                 "epochs": int, "noise_std": float},
    "distill": {"alpha": float, "beta": float, "lr": float,
                "batch_size": int, "epochs": int},
    "probe": {"lr": float, "batch_size": int, "epochs": int},
}


def _check_value(path: str, value, expected) -> object:
    if isinstance(value, bool) and expected is not bool:
        raise ConfigError(f"{path}: expected {getattr(expected, '__name__', expected)}, got bool")
    if expected is float:
        if isinstance(value, (int, float)):
            return float(value)
        raise ConfigError(f"{path}: expected a number, got {type(value).__name__}")
    if isinstance(expected, tuple):
        if isinstance(value, expected):
            return value
        raise ConfigError(f"{path}: wrong type {type(value).__name__}")
    if isinstance(value, expected):
        return value
    raise ConfigError(f"{path}: expected {expected.__name__}, got {type(value).__name__}")


def _merge_section(name: str, defaults: dict, override: dict) -> dict:
    merged = dict(defaults)
    schema = _SECTION_TYPES[name]
    for key, value in override.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {name}.{key}")
        merged[key] = _check_value(f"{name}.{key}", value, schema[key])
    return merged


def load_config(path=None, *, profile: str | None = None,
                seed: int | None = None) -> ExperimentConfig:
    """Build a fully resolved config from profile defaults plus overrides.

    Precedence, lowest to highest: profile defaults, config file, the
    explicit profile/seed arguments (the CLI flags).
    """
    raw: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping at the top level")
        raw = loaded

    known_top = {"profile", "seed"} | set(_SECTION_TYPES)
    for key in raw:
        if key not in known_top:
            raise ConfigError(f"unknown config key {key}")

    resolved_profile = profile or raw.get("profile") or "desk"
    if not isinstance(resolved_profile, str) or resolved_profile not in PROFILES:
        raise ConfigError(f"profile must be one of {PROFILES}, got {resolved_profile!r}")

    if seed is not None:
        resolved_seed = seed
    elif "seed" in raw:
        resolved_seed = _check_value("seed", raw["seed"], int)
    else:
        resolved_seed = DEFAULT_SEED

    defaults = _PROFILE_DEFAULTS[resolved_profile]
    sections = {}
    for name in _SECTION_TYPES:
        override = raw.get(name, {})
        if not isinstance(override, dict):
            raise ConfigError(f"config section {name} must be a mapping")
        sections[name] = _merge_section(name, defaults[name], override)

    dataset = DatasetSpec(**sections["dataset"])
    pretrain = PretrainConfig(**sections["pretrain"])
    distill = DistillConfig(**sections["distill"], class_count=dataset.classes)
    probe = ProbeConfig(**sections["probe"])
    return ExperimentConfig(profile=resolved_profile, seed=resolved_seed,
                            dataset=dataset, pretrain=pretrain,
                            distill=distill, probe=probe)


def resolved_dict(cfg: ExperimentConfig) -> dict:
    return {
        "profile": cfg.profile,
        "seed": cfg.seed,
        "dataset": {
            "kind": cfg.dataset.kind,
            "classes": cfg.dataset.classes,
            "train_per_class": cfg.dataset.train_per_class,
            "test_per_class": cfg.dataset.test_per_class,
            "path": cfg.dataset.path,
        },
        "pretrain": {
            "clusters": cfg.pretrain.clusters,
            "lr": cfg.pretrain.lr,
            "batch_size": cfg.pretrain.batch_size,
            "epochs": cfg.pretrain.epochs,
            "noise_std": cfg.pretrain.noise_std,
        },
        "distill": {
            "alpha": cfg.distill.alpha,
            "beta": cfg.distill.beta,
            "lr": cfg.distill.lr,
            "batch_size": cfg.distill.batch_size,
            "epochs": cfg.distill.epochs,
        },
        "probe": {
            "lr": cfg.probe.lr,
            "batch_size": cfg.probe.batch_size,
            "epochs": cfg.probe.epochs,
        },
    }


def write_resolved(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(resolved_dict(cfg), fh, sort_keys=True,
                       default_flow_style=False)


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(resolved_dict(cfg), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
