"""Run configuration: a JSON file plus command-line overrides."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

CONFIG_ENV = "TDCONVED_CONFIG"
VARIANTS = ("td1", "td2", "full")


@dataclass
class Config:
    # model
    d_v: int = 512
    d_r: int = 512
    d_f: int = 512
    d_a: int = 512
    d_w: int = 512
    k: int = 3
    num_enc_blocks: int = 2
    num_dec_blocks: int = 2
    variant: str = "full"
    t_max: int = 32
    n_v: int = 25
    # vocabulary
    min_count: int = 1
    # optimisation
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    threads: int = 1
    grad_chunk: int = 32
    # inference
    beam: int = 5
    max_len: int = 30
    # synthetic task
    synth_vocab: int = 20
    synth_len: int = 8
    synth_train: int = 2000
    synth_test: int = 200
    synth_noise: float = 0.0
    # paths
    data_dir: str = "data"
    checkpoint: str = "model.ckpt"
    log: str = "train.log"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"k must be an odd integer >= 1 (got {self.k}); try k=3")
        for name in ("d_v", "d_r", "d_f", "d_a", "d_w", "t_max", "n_v", "batch_size", "beam",
                     "threads", "grad_chunk", "min_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1 (got {getattr(self, name)})")
        for name in ("num_enc_blocks", "num_dec_blocks", "epochs", "max_len"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0 (got {getattr(self, name)})")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose one of {', '.join(VARIANTS)}")
        if self.max_len + 1 > self.t_max:
            raise ConfigError(f"t_max ({self.t_max}) must be at least max_len + 1 ({self.max_len + 1})")
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative (got {self.lr})")
        if self.synth_vocab < 1 or self.synth_len < 1:
            raise ConfigError("synth_vocab and synth_len must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: _coerce(known[k].type, k, v) for k, v in d.items()})

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "Config":
        """Read ``path`` (or $TDCONVED_CONFIG, or nothing), then apply overrides."""
        data: dict = {}
        path = path or os.environ.get(CONFIG_ENV)
        if path:
            try:
                data = json.loads(Path(path).read_text(encoding="utf-8"))
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
            except json.JSONDecodeError as e:
                raise ConfigError(f"config {path} is not valid JSON: {e}") from e
            if not isinstance(data, dict):
                raise ConfigError(f"config {path} must hold a JSON object")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw)


def _coerce(typ: str, name: str, value):
    try:
        if typ == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if typ == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {name} expects {typ}, got {value!r}") from None
