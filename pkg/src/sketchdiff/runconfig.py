"""Flat key-value run configuration: one document carrying every module's
knobs, with strict unknown-key rejection and a stable content hash."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    """Unknown key, bad value, or malformed config document."""


@dataclass
class RunConfig:
    config_version: int = 1
    seed: int = 0
    # dataset
    n_images: int = 400
    # schedule
    schedule_kind: str = "linear"
    schedule_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.06
    # pretraining
    pretrain_epochs: int = 40
    pretrain_batch: int = 32
    pretrain_lr: float = 2e-3
    class_conditional: bool = False
    eps_channels: int = 16
    # classifier
    classifier_steps: int = 700
    classifier_lr: float = 2e-3
    noise_aware: bool = True
    # fine-tuning
    finetune_lambda: float = 0.5
    rollout_steps: int = 16
    finetune_iterations: int = 200
    finetune_lr: float = 1e-4
    guidance_scale: float = 1.0
    target_class: int = -1  # -1 means unset
    encode_mode: str = "stochastic"
    # sampling
    sample_steps: int = 20
    eta: float = 0.0
    n_samples: int = 8
    # metrics
    metric_k: int = 3
    is_splits: int = 1
    # service
    port: int = 8008

    def target_class_or_none(self):
        return None if self.target_class < 0 else self.target_class

    def serialize(self) -> str:
        lines = [f"{f.name} = {_fmt(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        canon = "\n".join(sorted(self.serialize().splitlines()))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(text: str, ftype):
    text = text.strip()
    if ftype is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    try:
        return ftype(text)
    except ValueError as exc:
        raise ConfigError(f"bad value {text!r}: {exc}") from exc


def parse_runconfig(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    known = {f.name: f.type for f in fields(RunConfig)}
    types = {f.name: type(getattr(cfg, f.name)) for f in fields(RunConfig)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _parse_value(value, types[key]))
    return cfg


def load_runconfig(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such config file: {p}")
    return parse_runconfig(p.read_text())


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    types = {f.name: type(getattr(cfg, f.name)) for f in fields(RunConfig)}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, value if not isinstance(value, str) else _parse_value(value, types[key]))
    return cfg
