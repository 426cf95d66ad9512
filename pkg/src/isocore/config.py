"""Run configuration: a single strict JSON document.

Unknown keys are rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError


@dataclass
class DataSpec:
    domain: str = "torus"  # torus | sphere
    source: str = "synthetic"  # synthetic | image_dir
    mode: str = "pair"  # pair | triple
    cutoff: float = 3.0  # torus synthetic textures: radial frequency cutoff
    degree: int = 3  # sphere synthetic fields: polynomial degree
    image_dir: str | None = None
    eval_pairs: int = 64

    def validate(self) -> None:
        if self.domain not in ("torus", "sphere"):
            raise ConfigError("data.domain: expected 'torus' or 'sphere'")
        if self.source not in ("synthetic", "image_dir"):
            raise ConfigError("data.source: expected 'synthetic' or 'image_dir'")
        if self.mode not in ("pair", "triple"):
            raise ConfigError("data.mode: expected 'pair' or 'triple'")
        if self.source == "image_dir" and not self.image_dir:
            raise ConfigError("data.image_dir: required when data.source is 'image_dir'")
        if self.eval_pairs < 1:
            raise ConfigError("data.eval_pairs: must be >= 1")
        if self.degree < 0:
            raise ConfigError("data.degree: must be >= 0")


@dataclass
class TrainConfig:
    steps: int = 20000
    batch_size: int = 1
    lr_peak: float = 5e-4
    lr_final: float = 5e-5
    warmup_steps: int = 2000
    weight_decay: float = 1e-4
    alpha: float = 0.0
    beta: float = 0.1
    norm: str = "mse"  # residual norm of the data terms: frobenius | squared | mse
    regime: str = "pairwise"  # pairwise | triplet
    spectral_dropout: bool = False
    seed: int = 0
    height: int = 8
    width: int = 8
    channels: int = 64
    k: int = 32
    init: str = "random"  # random | identity
    eig_init_scale: float = 0.1
    checkpoint_every: int = 5000
    data: DataSpec = field(default_factory=DataSpec)

    @property
    def n(self) -> int:
        return self.height * self.width

    def validate(self) -> "TrainConfig":
        def need(cond: bool, key: str, msg: str):
            if not cond:
                raise ConfigError(f"{key}: {msg}")

        for key in ("steps", "batch_size", "warmup_steps", "seed", "height", "width", "channels", "k", "checkpoint_every"):
            need(isinstance(getattr(self, key), int) and not isinstance(getattr(self, key), bool), key, "must be an integer")
        need(self.steps > self.warmup_steps >= 0, "steps", "must exceed warmup_steps, which must be >= 0")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.lr_peak >= self.lr_final > 0, "lr_peak", "need lr_peak >= lr_final > 0")
        need(self.weight_decay >= 0, "weight_decay", "must be >= 0")
        need(self.alpha >= 0, "alpha", "must be >= 0")
        need(self.beta >= 0, "beta", "must be >= 0")
        need(self.norm in ("frobenius", "squared", "mse"), "norm", "expected 'frobenius', 'squared' or 'mse'")
        need(self.regime in ("pairwise", "triplet"), "regime", "expected 'pairwise' or 'triplet'")
        need(isinstance(self.spectral_dropout, bool), "spectral_dropout", "must be a boolean")
        need(self.height >= 1 and self.width >= 1 and self.channels >= 1, "height", "grid and channels must be >= 1")
        need(1 <= self.k <= self.n, "k", f"must lie in [1, {self.n}]")
        need(not self.spectral_dropout or self.k >= 2, "k", "spectral dropout needs k >= 2")
        need(self.init in ("random", "identity"), "init", "expected 'random' or 'identity'")
        need(self.eig_init_scale >= 0, "eig_init_scale", "must be >= 0")
        need(self.checkpoint_every >= 0, "checkpoint_every", "must be >= 0")
        self.data.validate()
        need(self.regime != "triplet" or self.data.mode == "triple", "data.mode", "triplet regime needs 'triple' data")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "TrainConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown key")
        kwargs = dict(raw)
        data_raw = kwargs.pop("data", {})
        if not isinstance(data_raw, dict):
            raise ConfigError("data: must be a JSON object")
        data_known = {f.name for f in dataclasses.fields(DataSpec)}
        bad = sorted(set(data_raw) - data_known)
        if bad:
            raise ConfigError(f"data.{bad[0]}: unknown key")
        try:
            cfg = cls(**kwargs, data=DataSpec(**data_raw))
        except TypeError as exc:
            raise ConfigError(f"config: {exc}") from None
        return cfg.validate()


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config: file {path} not found")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return TrainConfig.from_dict(raw)


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "isocore training config",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "steps": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "lr_peak": {"type": "number", "exclusiveMinimum": 0},
        "lr_final": {"type": "number", "exclusiveMinimum": 0},
        "warmup_steps": {"type": "integer", "minimum": 0},
        "weight_decay": {"type": "number", "minimum": 0},
        "alpha": {"type": "number", "minimum": 0},
        "beta": {"type": "number", "minimum": 0},
        "norm": {"enum": ["frobenius", "squared", "mse"]},
        "regime": {"enum": ["pairwise", "triplet"]},
        "spectral_dropout": {"type": "boolean"},
        "seed": {"type": "integer"},
        "height": {"type": "integer", "minimum": 1},
        "width": {"type": "integer", "minimum": 1},
        "channels": {"type": "integer", "minimum": 1},
        "k": {"type": "integer", "minimum": 1},
        "init": {"enum": ["random", "identity"]},
        "eig_init_scale": {"type": "number", "minimum": 0},
        "checkpoint_every": {"type": "integer", "minimum": 0},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "domain": {"enum": ["torus", "sphere"]},
                "source": {"enum": ["synthetic", "image_dir"]},
                "mode": {"enum": ["pair", "triple"]},
                "cutoff": {"type": "number", "minimum": 0},
                "degree": {"type": "integer", "minimum": 0},
                "image_dir": {"type": ["string", "null"]},
                "eval_pairs": {"type": "integer", "minimum": 1},
            },
        },
    },
}
