"""Runtime configuration: a single structured file covering every subsystem,
with environment-variable overrides."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np
import yaml

from .agent import PlantDynamics, PPOConfig, RewardWeights
from .datagen import GenConfig
from .detector import DetectorSpec, TrainConfig

ENV_PREFIX = "ANSRDT_"

SCENARIO_PRESETS = ("predictive-maintenance", "process-optimization", "deviation-response")


class ConfigError(ValueError):
    pass


@dataclass
class PipelineSettings:
    time_steps: int = 10
    stride: int = 1
    rolling_window: int = 100

    def validate(self) -> None:
        if self.time_steps < 1 or self.stride < 1:
            raise ConfigError("time_steps and stride must be >= 1")
        if self.rolling_window < 2:
            raise ConfigError("rolling_window must be >= 2")


@dataclass
class ReasonerSettings:
    tau: float = 0.85
    capacity: int = 32
    low_z: float = -1.0
    high_z: float = 1.0
    grad_z: float = 1.5
    min_support: int = 5
    max_body: int = 8
    # Facts asserted within the last fact_horizon cycles stay available to
    # inference, so alarms hold across an episode's tail.
    fact_horizon: int = 3
    # Symbolic feedback into detector training: guidance rules are mined from
    # the model's soft positives (probability above rule_mining_threshold)
    # and matching training windows get rule_boost-times sample weight during
    # a short fine-tuning phase.
    rule_mining_threshold: float = 0.2
    rule_boost: float = 3.0
    finetune_epochs: int = 8
    prune_min_confidence: float = 0.6
    prune_stale_window: float = 500.0
    prune_every: int = 200

    def validate(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")
        if self.capacity < 1:
            raise ConfigError("capacity must be positive")


@dataclass
class DetectorSettings:
    spec: DetectorSpec = field(default_factory=DetectorSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    threshold: float = 0.5

    def validate(self) -> None:
        self.spec.validate()
        self.train.validate()
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("decision threshold must lie in (0, 1)")


@dataclass
class AgentSettings:
    ppo: PPOConfig = field(default_factory=PPOConfig)
    plant: PlantDynamics = field(default_factory=PlantDynamics)
    reward: RewardWeights = field(default_factory=RewardWeights)
    rollout_len: int = 2048
    total_timesteps: int = 10240

    def validate(self) -> None:
        self.reward.validate()
        if self.rollout_len < 1:
            raise ConfigError("rollout_len must be positive")


@dataclass
class ServiceSettings:
    host: str = "127.0.0.1"
    port: int = 8321
    cycle_period_s: float = 0.2
    stream_keepalive_s: float = 5.0

    def validate(self) -> None:
        if not 0 < self.port < 65536:
            raise ConfigError("port must be a valid TCP port")


@dataclass
class TwinConfig:
    datagen: GenConfig = field(default_factory=GenConfig)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    detector: DetectorSettings = field(default_factory=DetectorSettings)
    reasoner: ReasonerSettings = field(default_factory=ReasonerSettings)
    agent: AgentSettings = field(default_factory=AgentSettings)
    service: ServiceSettings = field(default_factory=ServiceSettings)
    scenario: str = "deviation-response"
    seed: int = 42

    def validate(self) -> "TwinConfig":
        try:
            self.datagen.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.pipeline.validate()
        self.detector.validate()
        self.reasoner.validate()
        self.agent.validate()
        self.service.validate()
        if self.scenario not in SCENARIO_PRESETS:
            raise ConfigError(
                f"unknown scenario {self.scenario!r}; expected one of {SCENARIO_PRESETS}"
            )
        return self

    def to_dict(self) -> dict:
        data = asdict(self)
        data["datagen"]["correlation_matrix"] = np.asarray(
            self.datagen.correlation_matrix
        ).tolist()
        data["datagen"]["event_mix"] = {
            k.value: v for k, v in self.datagen.event_mix.items()
        }
        return data

    def to_yaml(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))


def _coerce_into(obj, data: dict, path: str) -> None:
    valid = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(f"unknown config key {path}{key}")
        current = getattr(obj, key)
        if is_dataclass(current) and isinstance(value, dict):
            _coerce_into(current, value, f"{path}{key}.")
            continue
        setattr(obj, key, _convert(current, key, value))


def _convert(current, key: str, value):
    if key == "correlation_matrix":
        return np.asarray(value, dtype=float)
    if key == "event_mix":
        from .datagen import EventType

        return {EventType(k): float(v) for k, v in value.items()}
    if key in ("conv_filters", "recurrent_units", "disturbance_len", "hidden"):
        return tuple(value)
    if key == "class_weights" and value is not None:
        return {int(k): float(v) for k, v in value.items()}
    if isinstance(current, bool):
        return bool(value)
    if isinstance(current, int) and not isinstance(value, bool) and key != "prune_stale_window":
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def from_dict(data: dict) -> TwinConfig:
    cfg = TwinConfig()
    _coerce_into(cfg, data or {}, "")
    return cfg.validate()


def load(path: str | Path | None = None, env: dict | None = None) -> TwinConfig:
    """Build a TwinConfig from an optional YAML file plus ANSRDT_* environment
    overrides (ANSRDT_SECTION_KEY=value, values parsed as YAML scalars)."""
    data: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid config file {path}: {exc}") from exc
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigError("config file must hold a mapping")
            data = loaded
    env = os.environ if env is None else env
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX) :].lower().split("_", 1)
        if len(parts) == 1:
            section, key = None, parts[0]
        else:
            section, key = parts
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        if section is None or not hasattr(TwinConfig(), section):
            data[name[len(ENV_PREFIX) :].lower()] = value
        else:
            target = data.setdefault(section, {})
            if not isinstance(target, dict):
                raise ConfigError(f"override {name} conflicts with file value")
            _assign_nested(target, key, value)
    return from_dict(data)


def _assign_nested(target: dict, key: str, value) -> None:
    # Keys inside sections may themselves be nested (e.g. detector spec
    # fields are addressed as spec_<field>).
    for head in ("spec", "train", "ppo", "plant", "reward"):
        prefix = head + "_"
        if key.startswith(prefix):
            target.setdefault(head, {})[key[len(prefix) :]] = value
            return
    target[key] = value
