"""Experiment configuration: nested dataclasses loaded from JSON with strict keys."""

from __future__ import annotations

import dataclasses
import json
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .contrastive import ContrastiveConfig
from .data import AugmentConfig
from .encoder import MixerConfig, MLPConfig
from .evaluation import ProbeConfig
from .lambda_analysis import DEFAULT_LAMBDAS
from .training import AdamConfig, TrainConfig

OUTPUT_ENV = "DEBCLUST_OUTPUT_DIR"


class ConfigError(ValueError):
    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"{key_path or '<root>'}: {message}")


@dataclass(frozen=True)
class TrainSection:
    gamma: float = 5.0
    batch_size: int = 32
    epochs: int = 30
    target_refresh: str = "step"
    kl_reduction: str = "mean"
    cluster_on_view1: bool = False
    checkpoint_every: int = 0
    vector_noise: float = 1.0
    vector_drop: float = 0.1
    log_wall_time: bool = False


@dataclass(frozen=True)
class DataSection:
    source: str = "blobs"
    path: str | None = None
    class_count: int = 2
    max_per_class: int = 400
    imbalance_ratio: float = 20.0
    test_max_per_class: int = 200
    dim: int = 8
    separation: float = 6.0
    sigma: float = 1.0
    cifar_train: tuple[str, ...] = ()
    cifar_test: tuple[str, ...] = ()
    cifar_limit: int | None = None


@dataclass(frozen=True)
class ProbeSection:
    epochs: int = 100
    batch_size: int = 512
    semi_fraction: float = 0.1


@dataclass(frozen=True)
class KnnSection:
    k: int = 20


@dataclass(frozen=True)
class SweepSection:
    sim_pos: float = 1.0
    sim_negs: tuple[float, ...] = (0.0, 0.0)
    tau: float = 0.5
    lambdas: tuple[float, ...] = tuple(DEFAULT_LAMBDAS)


@dataclass(frozen=True)
class AblateSection:
    lambdas: tuple[float, ...] = (1.0, 2.0, 3.0, 5.0)
    gammas: tuple[float, ...] = (0.1, 1.0, 5.0)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    epochs: int = 10


@dataclass(frozen=True)
class GradCheckSection:
    instances: int = 100
    step: float = 1e-4
    tolerance: float = 1e-5


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    encoder: str = "mlp"
    mlp: MLPConfig = field(default_factory=MLPConfig)
    mixer: MixerConfig = field(default_factory=lambda: MixerConfig(depth=4, channels=64))
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    probe: ProbeSection = field(default_factory=ProbeSection)
    knn: KnnSection = field(default_factory=KnnSection)
    lambda_sweep: SweepSection = field(default_factory=SweepSection)
    ablate: AblateSection = field(default_factory=AblateSection)
    gradcheck: GradCheckSection = field(default_factory=GradCheckSection)

    def __post_init__(self):
        if self.encoder not in ("mlp", "mixer"):
            raise ConfigError("encoder", f"expected 'mlp' or 'mixer', got {self.encoder!r}")
        if self.data.source not in ("blobs", "cifar"):
            raise ConfigError("data.source", f"expected 'blobs' or 'cifar', got {self.data.source!r}")

    def encoder_config(self):
        return self.mlp if self.encoder == "mlp" else self.mixer

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(gamma=t.gamma, contrastive=self.contrastive, adam=self.adam, augment=self.augment,
                           batch_size=t.batch_size, epochs=t.epochs, seed=self.seed,
                           target_refresh=t.target_refresh, kl_reduction=t.kl_reduction,
                           cluster_on_view1=t.cluster_on_view1,
                           checkpoint_every=t.checkpoint_every, vector_noise=t.vector_noise,
                           vector_drop=t.vector_drop, log_wall_time=t.log_wall_time)

    def probe_config(self, label_fraction: float = 1.0) -> ProbeConfig:
        return ProbeConfig(epochs=self.probe.epochs, batch_size=self.probe.batch_size,
                           label_fraction=label_fraction, seed=self.seed, adam=self.adam)


def _hints(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        errors = []
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _coerce(arg, value, path)
            except ConfigError as exc:
                errors.append(exc)
        raise errors[0] if errors else ConfigError(path, "no matching type")
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
        return from_dict(tp, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        args = typing.get_args(tp)
        item = args[0] if args else Any
        if len(args) == 2 and args[1] is Ellipsis or len(args) <= 1:
            return tuple(_coerce(item, v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(path, f"expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data: dict, path: str = ""):
    """Build dataclass ``cls`` from ``data``, rejecting unknown keys."""
    hints = _hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(sub, "unknown key")
        kwargs[key] = _coerce(hints[key], value, sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def to_dict(cfg) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v

    return conv(cfg)


def dumps(cfg: ExperimentConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def loads(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"malformed JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("", "top level must be a mapping")
    return from_dict(ExperimentConfig, data)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as JSON when possible."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key.path=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "cannot descend into a non-mapping value")
        node[parts[-1]] = _parse_value(raw)
    return data


def resolve(path: str | os.PathLike | None = None, overrides: list[str] | None = None,
            env: dict | None = None) -> ExperimentConfig:
    """File values, then the output-dir environment variable, then flag overrides."""
    env = os.environ if env is None else env
    data: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"malformed JSON in {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("", "top level must be a mapping")
    if env.get(OUTPUT_ENV):
        data["output_dir"] = env[OUTPUT_ENV]
    apply_overrides(data, list(overrides or []))
    return from_dict(ExperimentConfig, data)
