"""JSON run configuration: strict keys, documented defaults, echoed back in full.

Sections and defaults::

    {
      "model": {"lmax": 4, "channels": 8, "n_vectorial": 4, "rbf_size": 16, "rbf_alpha": 0.8,
                "cutoff": 5.0, "pair_cutoff": 20.0, "basis": "toy-svp", "k_path": 0.0,
                "k_pair": 0.0, "tss_epoch": 3, "gated": true, "seed": 0},
      "train": {"epochs": 50, "batch_size": 8, "lr": 0.002, "warmup_steps": 100,
                "seed": 0, "eval_every": 1, "schedule": "constant", "holdout": 0},
      "data":  {"seed": 0, "n_molecules": 250, "size_range": [3, 12], "basis": "toy-svp"}
    }

A top-level ``"k"`` sets both sparsity rates and ``"t"`` the switch epoch.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .model.network import ModelConfig
from .training.train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    seed: int = 0
    n_molecules: int = 250
    size_range: tuple[int, int] = (3, 12)
    basis: str = "toy-svp"


@dataclass
class RunTrainConfig(TrainConfig):
    holdout: int = 0

    def core(self) -> TrainConfig:
        fields = {f.name for f in dataclasses.fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in fields})


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: RunTrainConfig = field(default_factory=RunTrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict:
        out = {"model": self.model.to_dict(), "train": dataclasses.asdict(self.train),
               "data": dataclasses.asdict(self.data)}
        out["data"]["size_range"] = list(self.data.size_range)
        return out


def _section(cls, data: dict, name: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {unknown}")
    values = dict(data)
    if "size_range" in values:
        values["size_range"] = tuple(values["size_range"])
    return cls(**values)


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    allowed = {"model", "train", "data", "k", "t"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    model = dict(data.get("model", {}))
    if "k" in data:
        model.setdefault("k_path", data["k"])
        model.setdefault("k_pair", data["k"])
    if "t" in data:
        model.setdefault("tss_epoch", data["t"])
    try:
        cfg = RunConfig(
            model=_section(ModelConfig, model, "model").validate(),
            train=_section(RunTrainConfig, data.get("train", {}), "train").validate(),
            data=_section(DataConfig, data.get("data", {}), "data"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)
