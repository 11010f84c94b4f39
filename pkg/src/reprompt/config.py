"""Experiment configuration: nested dataclasses, JSON round-trip, dotted
overrides, and a canonical content hash for artifact provenance."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any

from .deferral import CostSpec
from .policy import TrainConfig
from .propagator import KindDynamics, PromptDynamics
from .synthgen import ClipConfig

SEED_ENV_VAR = "REPROMPT_SEED"


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a full experiment run depends on."""

    seed: int = 42
    n_train: int = 200
    n_eval: int = 50
    sample_count: int = 10
    clip: ClipConfig = field(default_factory=ClipConfig)
    dynamics: PromptDynamics = field(default_factory=PromptDynamics)
    cost: CostSpec = field(default_factory=CostSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep_lambdas: tuple[float, ...] = (0.01, 0.06, 0.08)

    def __post_init__(self):
        if self.n_train < 1 or self.n_eval < 1:
            raise ValueError("need at least one train and one eval clip")
        if self.sample_count < 2:
            raise ValueError("sample_count must be at least 2")
        lams = list(self.sweep_lambdas)
        if lams != sorted(lams) or len(set(lams)) != len(lams):
            raise ValueError("sweep_lambdas must be strictly increasing")


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _to_plain(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def to_dict(cfg: ExperimentConfig) -> dict:
    return _to_plain(cfg)


def _build(cls, data: dict):
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in names:
            raise ValueError(f"unknown config field: {key}")
        target = names[key].type
        if key == "clip":
            value = _build(ClipConfig, value)
        elif key == "dynamics":
            value = _build(PromptDynamics, value)
        elif key in ("mask", "box", "point"):
            value = _build(KindDynamics, value)
        elif key == "cost":
            value = _build(CostSpec, value)
        elif key == "train":
            value = _build(TrainConfig, value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, dict(data))


def config_hash(cfg: ExperimentConfig) -> str:
    """Hex digest of the canonical JSON form; stable across field order."""
    canon = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``dotted.path=value`` overrides; values parse as JSON first and
    fall back to raw strings."""
    data = to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like path=value: {item!r}")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        if not all(keys):
            raise ValueError(f"bad override path: {path!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        for key in keys[:-1]:
            if not isinstance(node, dict) or key not in node:
                raise ValueError(f"unknown config path: {path!r}")
            node = node[key]
        if not isinstance(node, dict) or keys[-1] not in node:
            raise ValueError(f"unknown config path: {path!r}")
        node[keys[-1]] = value
    return from_dict(data)


def load_config(path: str | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Build a config from an optional JSON file plus overrides. A seed in
    the environment takes precedence over both."""
    if path is None:
        cfg = ExperimentConfig()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = from_dict(json.load(fh))
    if overrides:
        cfg = apply_overrides(cfg, list(overrides))
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise ValueError(f"{SEED_ENV_VAR} must be an integer") from exc
        cfg = apply_overrides(cfg, [f"seed={seed}"])
    return cfg
