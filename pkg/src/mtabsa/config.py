"""Flat ``key = value`` run configuration.

Run-level keys are bare (``train_path``, ``test_path``, ``out_dir``,
``seed``, ``format``); model, training and ensemble settings carry the
``model.``, ``train.`` and ``ensemble.`` prefixes. Unknown keys are errors.
Blank lines and ``#`` comments are ignored. Relative paths in a config file
resolve against the file's directory.

    train_path = data/train.jsonl
    seed = 7
    model.max_len = 48
    train.epochs = 15
    ensemble.embed_dims = 100, 200, 300
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import neuralnet as nn
from .ensemble import EnsembleConfig
from .errors import ConfigError
from .training import TrainConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _dims(text: str) -> tuple:
    return tuple(int(x) for x in text.replace(",", " ").split())


_KEYS = {
    "train_path": str,
    "test_path": str,
    "out_dir": str,
    "seed": int,
    "format": str,
    "model.embed_dim": int,
    "model.max_len": int,
    "model.num_filters": int,
    "model.kernel_size": int,
    "model.min_count": int,
    "train.epochs": int,
    "train.batch_size": int,
    "train.learning_rate": float,
    "train.optimizer": str,
    "train.beta1": float,
    "train.beta2": float,
    "train.adam_eps": float,
    "train.validation_fraction": float,
    "train.shuffle": _bool,
    "ensemble.embed_dims": _dims,
    "ensemble.voting": str,
}


@dataclass(frozen=True)
class RunConfig:
    train_path: str | None = None
    test_path: str | None = None
    out_dir: str = "run"
    seed: int = 0
    format: str = "text"
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    ensemble: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.format not in ("text", "json"):
            raise ConfigError(f"format must be 'text' or 'json', got {self.format!r}")
        # build once so bad values fail at load time
        self.model_config()
        self.ensemble_config()

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        values: dict = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            if key not in _KEYS:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            try:
                values[key] = _KEYS[key](value)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
        return cls.from_values(values)

    @classmethod
    def from_values(cls, values: dict) -> "RunConfig":
        kwargs: dict = {"model": {}, "train": {}, "ensemble": {}}
        for key, value in values.items():
            if key not in _KEYS:
                raise ConfigError(f"unknown key {key!r}")
            section, dot, name = key.partition(".")
            if dot:
                kwargs[section][name] = value
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        cfg = cls.from_text(text, str(path))
        # paths inside a config file are relative to that file
        changes = {}
        for key in ("train_path", "test_path", "out_dir"):
            value = getattr(cfg, key)
            if value is not None and not Path(value).is_absolute():
                changes[key] = str(path.parent / value)
        return replace(cfg, **changes)

    def with_overrides(self, seed=None, out_dir=None, format=None) -> "RunConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if out_dir is not None:
            changes["out_dir"] = out_dir
        if format is not None:
            changes["format"] = format
        return replace(self, **changes)

    @property
    def min_count(self) -> int:
        return self.model.get("min_count", 1)

    def model_config(self) -> nn.ModelConfig:
        opts = {k: v for k, v in self.model.items() if k != "min_count"}
        opts.setdefault("max_len", 100)
        try:
            return nn.ModelConfig(0, **opts)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.train)

    def ensemble_config(self) -> EnsembleConfig:
        opts = dict(self.ensemble)
        return EnsembleConfig(train=self.train_config(), **opts)

    def canonical(self) -> dict:
        """Every resolved setting, defaults included; paths excluded."""
        return {
            "seed": self.seed,
            "model": asdict(self.model_config()) | {"min_count": self.min_count},
            "train": asdict(self.train_config()),
            "ensemble": {
                "embed_dims": list(self.ensemble_config().embed_dims),
                "voting": self.ensemble_config().voting,
            },
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()
