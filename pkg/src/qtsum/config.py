"""Run configuration shared by the command-line tools."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .extraction import ExtractionConfig
from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model (defaults follow the published setup)
    dim: int = 320
    ff_dim: int = 512
    layers: int = 3
    attn_heads: int = 4
    sentence_heads: int = 8
    vocab_size: int = 32000
    codebook_size: int = 1024
    soft_samples: int = 30
    lr: float = 1e-3
    lr_decay: float = 0.9
    warmup_epochs: int = 4
    epochs: int = 20
    use_positional_encodings: bool = False
    dropout: float = 0.1
    clip_norm: float = 1.0
    commitment_weight: float = 1.0
    batch_size: int = 64
    ema_decay: float = 0.99
    ema_epsilon: float = 1e-5
    ema_assignment: str = "hard"
    activation: str = "relu"
    max_sentence_len: int = 64
    # extraction
    method: str = "two_step"
    cluster_samples: int = 300
    sentences_per_cluster: int = 30
    word_budget: int = 100
    redundancy_threshold: float = 0.6
    # run
    train_path: str = ""
    checkpoint: str = "qt.ckpt"
    output_dir: str = "."
    seed: int = 0
    deterministic_mode: bool = True

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names}).validate()

    def extraction_config(self) -> ExtractionConfig:
        return ExtractionConfig(self.method, self.cluster_samples, self.sentences_per_cluster,
                                self.word_budget, self.redundancy_threshold, self.seed).validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        for name, f in known.items():
            val = getattr(cfg, name)
            typ = f.type if isinstance(f.type, str) else f.type.__name__
            if typ == "float" and isinstance(val, int) and not isinstance(val, bool):
                setattr(cfg, name, float(val))
            elif typ in ("int", "bool") and type(val).__name__ != typ:
                raise ConfigError(f"config key {name!r} must be {typ}, got {val!r}")
            elif typ == "str" and not isinstance(val, str):
                raise ConfigError(f"config key {name!r} must be a string")
        try:
            cfg.model_config()
            cfg.extraction_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cfg


def parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, raw = item.split("=", 1)
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def load_run_config(path: str | Path | None, overrides: list[str] = ()) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    for item in overrides:
        k, v = parse_override(item)
        data[k] = v
    return RunConfig.from_dict(data)
