"""Model/run configuration, named profiles and the INI config file format."""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .encoder import CONTEXT_MODES, EncoderConfig
from .predictor import PredictorConfig


class ConfigError(ValueError):
    pass


@dataclass
class ContextConfig:
    n_prev: int = 1
    pool_L: int = 16
    share_pooling: bool = False


@dataclass
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    clip_norm: float = 5.0
    warmup_steps: int = 0


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    context: ContextConfig = field(default_factory=ContextConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    joint_dim: int = 512
    vocab_size: int = 5001
    seed: int = 0
    precision: str = "float64"
    batch_size: int = 8
    frame_rate: float = 100.0
    max_symbols_per_frame: int = 10

    @property
    def context_mode(self) -> str:
        return self.encoder.context_mode

    def validate(self) -> "ModelConfig":
        try:
            self.encoder.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.context.n_prev < 1:
            raise ConfigError("n_prev must be >= 1")
        if self.context.pool_L < 1:
            raise ConfigError("pool_L must be >= 1")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.vocab_size < 2:
            raise ConfigError("vocabulary needs blank plus at least one token")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        enc = dict(d["encoder"])
        if enc.get("context_layers") is not None:
            enc["context_layers"] = tuple(enc["context_layers"])
        return cls(encoder=EncoderConfig(**enc), predictor=PredictorConfig(**d["predictor"]),
                   context=ContextConfig(**d["context"]), optim=OptimConfig(**d["optim"]),
                   **{k: v for k, v in d.items() if k not in ("encoder", "predictor", "context", "optim")})


def paper_profile() -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(input_dim=80, num_blocks=12, heads=8, dim=512, ffn_dim=2048,
                              conv_kernel=31, subsample_channels=512, lookahead=1, dropout=0.1),
        predictor=PredictorConfig(embed_dim=300, hidden=300),
        context=ContextConfig(n_prev=1, pool_L=16),
        joint_dim=512, vocab_size=5001,
    )


def desk_profile() -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(input_dim=16, num_blocks=2, heads=2, dim=32, ffn_dim=64,
                              conv_kernel=7, subsample_channels=8, max_positions=256, dropout=0.1),
        predictor=PredictorConfig(embed_dim=16, hidden=16),
        context=ContextConfig(n_prev=1, pool_L=4),
        joint_dim=32, vocab_size=11,
    )


PROFILES = {"paper": paper_profile, "desk": desk_profile}

# INI section -> (config attribute path, field type source)
_SECTIONS = {
    "encoder": "encoder",
    "predictor": "predictor",
    "context": "context",
    "optim": "optim",
    "model": None,
}


def _coerce(value: str, current: Any, name: str):
    if isinstance(current, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if name.endswith("context_layers"):
        v = value.strip()
        return None if v.lower() in ("", "all", "none") else tuple(int(x) for x in v.split(","))
    return value.strip()


def set_option(cfg: ModelConfig, section: str, key: str, value: str) -> None:
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    target = cfg if _SECTIONS[section] is None else getattr(cfg, _SECTIONS[section])
    if not hasattr(target, key) or key.startswith("_"):
        raise ConfigError(f"unknown option {section}.{key}")
    setattr(target, key, _coerce(value, getattr(target, key), f"{section}.{key}"))


def load_config(path: str | Path | None = None, profile: str = "desk") -> ModelConfig:
    """Start from a named profile, then apply ``[section] key = value`` lines."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = PROFILES[profile]()
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keep option names case-sensitive (pool_L)
        if not parser.read(path):
            raise ConfigError(f"cannot read config file {path}")
        for section in parser.sections():
            for key, value in parser.items(section):
                set_option(cfg, section, key, value)
    return cfg


def dump_config(cfg: ModelConfig) -> str:
    lines = []
    for section, attr in _SECTIONS.items():
        obj = cfg if attr is None else getattr(cfg, attr)
        lines.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            if dataclasses.is_dataclass(val):
                continue
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            elif val is None:
                val = "all"
            lines.append(f"{f.name} = {val}")
        lines.append("")
    return "\n".join(lines)


__all__ = ["ConfigError", "ContextConfig", "OptimConfig", "ModelConfig", "paper_profile",
           "desk_profile", "PROFILES", "load_config", "dump_config", "set_option", "CONTEXT_MODES"]
