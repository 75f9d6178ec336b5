"""Strict JSON run configuration shared by the CLI commands.

Every section is optional and every field has a default, except seeds: a
command that needs a seed and finds none refuses to run rather than fall
back to the clock. Unknown sections or keys are errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .attacks import AttackConfig
from .nn import TrainConfig
from .slq import DEFAULT_QUALITIES, SlqConfig


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "dataset": {"seed", "train_count", "eval_count", "train_path", "eval_path"},
    "train": {"seed", "epochs", "batch_size", "learning_rate", "momentum"},
    "slq": {"seed", "qualities"},
    "attack": {"seed", "eps", "alpha", "iterations", "random_start", "precision"},
    "scenario": {"proxies", "plain_model"},
    "output": {"curve"},
}

_INTS = {"seed", "train_count", "eval_count", "epochs", "batch_size", "iterations"}
_FLOATS = {"learning_rate", "momentum", "eps", "alpha"}


def _check_value(section: str, key: str, value):
    where = f"{section}.{key}"
    if key in _INTS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        if key == "seed" and value < 0:
            raise ConfigError(f"{where} must be non-negative")
    elif key in _FLOATS:
        if key == "alpha" and value is None:
            return
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
    elif key == "random_start" and not isinstance(value, bool):
        raise ConfigError(f"{where} must be true or false")
    elif key == "precision" and value not in ("float32", "float64"):
        raise ConfigError(f"{where} must be 'float32' or 'float64'")
    elif key == "qualities" and not (isinstance(value, list) and all(isinstance(q, int) and not isinstance(q, bool) for q in value)):
        raise ConfigError(f"{where} must be a list of integers")
    elif key == "proxies" and not (isinstance(value, list) and all(isinstance(p, str) for p in value)):
        raise ConfigError(f"{where} must be a list of paths")
    elif key in ("train_path", "eval_path", "plain_model", "curve") and not isinstance(value, str):
        raise ConfigError(f"{where} must be a path string")


@dataclass
class RunConfig:
    sections: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path)

    @classmethod
    def from_dict(cls, doc, base_dir=".") -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        for name, body in doc.items():
            if name not in _SCHEMA:
                raise ConfigError(f"unknown config section {name!r}")
            if not isinstance(body, dict):
                raise ConfigError(f"section {name!r} must be an object")
            for key, value in body.items():
                if key not in _SCHEMA[name]:
                    raise ConfigError(f"unknown key {name}.{key}")
                _check_value(name, key, value)
        cfg = cls({k: dict(v) for k, v in doc.items()}, Path(base_dir))
        # surface range errors early
        cfg.train_config(seed=0)
        cfg.attack_config(seed=0)
        cfg.slq_config(seed=0)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, path.parent)

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def seed(self, section: str, override: int | None = None) -> int:
        if override is not None:
            return override
        value = self.get(section, "seed")
        if value is None:
            raise ConfigError(f"{section}.seed is required")
        return value

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def train_config(self, seed: int | None = None) -> TrainConfig:
        try:
            return TrainConfig(
                epochs=self.get("train", "epochs", 20),
                batch_size=self.get("train", "batch_size", 32),
                learning_rate=float(self.get("train", "learning_rate", 0.01)),
                momentum=float(self.get("train", "momentum", 0.9)),
                seed=self.seed("train", seed),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def qualities(self) -> tuple[int, ...]:
        return tuple(self.get("slq", "qualities", list(DEFAULT_QUALITIES)))

    def slq_config(self, seed: int | None = None) -> SlqConfig:
        try:
            return SlqConfig(self.qualities, seed=self.seed("slq", seed))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def attack_config(self, seed: int | None = None, adaptive: bool = True) -> AttackConfig:
        alpha = self.get("attack", "alpha")
        try:
            return AttackConfig(
                eps=float(self.get("attack", "eps", 16 / 255)),
                alpha=None if alpha is None else float(alpha),
                iterations=self.get("attack", "iterations", 20),
                random_start=self.get("attack", "random_start", True),
                seed=self.seed("attack", seed),
                adaptive=adaptive,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def precision(self) -> str:
        return self.get("attack", "precision", "float32")
