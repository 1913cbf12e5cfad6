"""Experiment configuration: a flat ``key = value`` file plus overrides."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .agent import Variant
from .data import PartitionSpec
from .exceptions import ConfigError

MODES = ("sohip", "standalone")


def participants_per_round(participation: float, num_agents: int) -> int:
    # tolerance keeps products like 0.29 * 100 from flooring to 28
    return math.floor(participation * num_agents + 1e-9)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``dataset`` is ``"synthetic"`` (a Gaussian mixture built from
    ``num_classes``, ``d_in``, ``per_class`` and ``spread``) or a path to a
    CSV file readable by :func:`sohip.data.load_csv`.
    """

    dataset: str = "synthetic"
    num_classes: int = 10
    d_in: int = 16
    per_class: int = 200
    spread: float = 0.5
    partition: str = "pathological"
    classes_per_agent: int = 2
    alpha: float = 0.5
    test_fraction: float = 0.2
    num_agents: int = 20
    participation: float = 0.5
    rounds: int = 100
    memory_dim: int = 8
    feature_dims: tuple[int, ...] = (16, 24, 32, 48)
    batch_size: int = 32
    local_epochs: int = 2
    lr: float = 0.01
    eval_interval: int = 5
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    variant: str = "full"
    mode: str = "sohip"
    output_dir: str = "runs"
    transcript: bool = False

    def validate(self) -> list[str]:
        errors = []
        for name in ("num_classes", "d_in", "per_class", "num_agents", "memory_dim", "batch_size",
                     "local_epochs", "eval_interval"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.rounds < 0:
            errors.append(f"rounds must be >= 0, got {self.rounds}")
        if self.dataset == "synthetic" and (self.num_classes < 2 or self.per_class < 2):
            errors.append("synthetic data needs num_classes >= 2 and per_class >= 2")
        if self.spread < 0:
            errors.append(f"spread must be >= 0, got {self.spread}")
        if not self.lr > 0:
            errors.append(f"lr must be > 0, got {self.lr}")
        if not 0 < self.participation <= 1:
            errors.append(f"participation must lie in (0, 1], got {self.participation}")
        elif participants_per_round(self.participation, self.num_agents) < 1:
            errors.append(
                f"floor(participation * num_agents) = floor({self.participation} * {self.num_agents}) is 0; "
                "at least one agent must participate per round"
            )
        if not self.feature_dims:
            errors.append("feature_dims must list at least one dimension")
        elif any(d < 1 for d in self.feature_dims):
            errors.append(f"feature_dims must be positive, got {list(self.feature_dims)}")
        elif self.memory_dim > min(self.feature_dims):
            errors.append(
                f"memory_dim={self.memory_dim} exceeds min(feature_dims)={min(self.feature_dims)}; "
                "the shared memory dimension must satisfy m <= d_i for every agent"
            )
        if not self.seeds:
            errors.append("seeds must list at least one seed")
        if self.mode not in MODES:
            errors.append(f"mode must be one of {MODES}, got {self.mode!r}")
        try:
            Variant.parse(self.variant)
        except ValueError as exc:
            errors.append(str(exc))
        errors.extend(self.partition_spec(0).validate(self.num_classes if self.dataset == "synthetic" else None))
        return errors

    def partition_spec(self, seed: int) -> PartitionSpec:
        return PartitionSpec(self.partition, self.num_agents, self.classes_per_agent, self.alpha,
                             self.test_fraction, seed)

    def replace(self, **changes) -> "ExperimentConfig":
        return from_mapping({**self.to_dict(), **changes})

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def participants_per_round(self) -> int:
        return participants_per_round(self.participation, self.num_agents)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, value):
    kind = _FIELDS[name].type
    if kind == "tuple[int, ...]":
        if isinstance(value, str):
            value = [v for v in value.replace(" ", "").split(",") if v]
        return tuple(int(v) for v in value)
    if isinstance(value, str):
        value = value.strip()
    if kind == "int":
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"expected an integer, got {value}")
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "bool":
        if isinstance(value, bool):
            return value
        if str(value).lower() in _TRUE:
            return True
        if str(value).lower() in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    return str(value)


def from_mapping(values: Mapping[str, Any]) -> ExperimentConfig:
    """Build and validate a config; every problem is reported at once."""
    errors, kwargs = [], {}
    for key, raw in values.items():
        if key not in _FIELDS:
            errors.append(f"unknown key {key!r}")
            continue
        try:
            kwargs[key] = _coerce(key, raw)
        except (TypeError, ValueError) as exc:
            errors.append(f"{key}: {exc}")
    cfg = ExperimentConfig(**kwargs)
    errors += cfg.validate()
    if errors:
        raise ConfigError(errors)
    return cfg


def read_config_file(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_config(path=None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Defaults, then the file at ``path`` (if any), then ``overrides``."""
    values: dict[str, Any] = {}
    if path is not None:
        values.update(read_config_file(path))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return from_mapping(values)
