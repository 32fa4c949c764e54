"""Pipeline configuration: one JSON file with a section per stage.

Unknown sections or keys are rejected. Missing keys take the defaults below.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .reconstruction import ReconWeights
from .retarget import RetargetWeights
from .tracking.randomization import RandomizationConfig
from .tracking.rewards import TERMINATION_THRESHOLDS, RewardConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    tau_grad: float = 0.05
    box: float = 2.0
    voxel: float = 0.1
    cap: int = 20
    cell: float = 0.1
    use_human_mask: bool = True


@dataclass(frozen=True)
class SolverSection:
    max_iterations: int = 100
    cost_tol: float = 1e-9


@dataclass(frozen=True)
class PPOConfig:
    """Trainer hyperparameters. Validated and recorded, never used to train."""

    gamma: float = 0.99
    gae_lambda: float = 0.95
    desired_kl: float = 0.02
    lr_adapt_factor: float = 1.2
    learning_rate: float = 1e-3
    finetune_learning_rate: float = 2e-5
    max_grad_norm: float = 1.0
    learning_epochs: int = 5
    rollout_length: int = 24
    entropy_coef: float = 0.0025
    init_action_std: float = 0.8
    bounds_loss_coef: float = 0.0005
    action_limit: float = 8.0
    hidden_dims: tuple = (1024, 512, 256, 128)

    def __post_init__(self):
        for name in ("gamma", "gae_lambda"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError(f"ppo.{name} must lie in (0, 1]")
        for name in ("desired_kl", "learning_rate", "finetune_learning_rate", "max_grad_norm", "init_action_std",
                     "action_limit"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"ppo.{name} must be positive")
        if self.lr_adapt_factor <= 1.0:
            raise ConfigError("ppo.lr_adapt_factor must exceed 1")
        for name in ("learning_epochs", "rollout_length"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"ppo.{name} must be a positive integer")
        if self.entropy_coef < 0 or self.bounds_loss_coef < 0:
            raise ConfigError("ppo coefficients must be non-negative")
        dims = tuple(self.hidden_dims)
        if not dims or any(not isinstance(d, int) or d < 1 for d in dims):
            raise ConfigError("ppo.hidden_dims must be positive integers")
        object.__setattr__(self, "hidden_dims", dims)


@dataclass(frozen=True)
class PipelineConfig:
    reconstruction: ReconWeights = field(default_factory=ReconWeights)
    reconstruction_solver: SolverSection = field(default_factory=SolverSection)
    scene: SceneConfig = field(default_factory=SceneConfig)
    retarget: RetargetWeights = field(default_factory=RetargetWeights)
    retarget_solver: SolverSection = field(default_factory=SolverSection)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    history: int = 5
    termination: str = "terrain"

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


def _section(cls, values, name: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section '{name}' must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {unknown}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid '{name}' section: {exc}") from exc


def config_from_dict(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    doc = dict(doc)
    doc.pop("format_version", None)
    kinds = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(doc) - set(kinds))
    if unknown:
        raise ConfigError(f"unknown configuration sections: {unknown}")
    kw = {}
    for name, value in doc.items():
        default = getattr(PipelineConfig(), name)
        if dataclasses.is_dataclass(default):
            kw[name] = _section(type(default), value, name)
        else:
            kw[name] = value
    cfg = PipelineConfig(**kw)
    if not isinstance(cfg.history, int) or cfg.history < 1:
        raise ConfigError("history must be a positive integer")
    if cfg.termination not in TERMINATION_THRESHOLDS:
        raise ConfigError(f"termination must be one of {sorted(TERMINATION_THRESHOLDS)}")
    return cfg


def load_config(path: Optional[str | Path] = None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return config_from_dict(doc)
