"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable

from .layers import ConfigurationError

CONFIG_ENV = "MLTTS_CONFIG"

DIM_PRESETS = {
    "desk": dict(embed_dim=32, hidden_dim=32, num_blocks=2, num_heads=2, ffn_dim=64, window=4),
    # widens the language/speaker embeddings only; the encoder stays desk-sized
    "paper-dims": dict(embed_dim=256, hidden_dim=32, num_blocks=2, num_heads=2, ffn_dim=64, window=4),
}


@dataclass(frozen=True)
class TrainingConfig:
    seed: int = 42
    total_steps: int = 300
    batch_size: int = 16
    learning_rate: float = 0.003
    momentum: float = 0.9
    optimizer: str = "adam"
    grad_clip: float = 0.0
    w_dur: float = 1.0
    w_reg: float = 1.0
    lambda_steepness: float = 10.0
    enable_dat: bool = True
    enable_reg_loss: bool = True
    share_speaker_projection: bool = True
    duration_source: str = "oracle"
    detach_duration_input: bool = True
    dims: str = "desk"
    embed_dim: int | None = None
    hidden_dim: int | None = None
    num_blocks: int | None = None
    num_heads: int | None = None
    ffn_dim: int | None = None
    window: int | None = None
    ddp_layers: int = 2
    ddp_kernel: int = 3
    decoder_kernel: int = 3
    classifier_layers: int = 2
    activation: str = "relu"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.dims not in DIM_PRESETS:
            raise ConfigurationError(f"unknown dims preset {self.dims!r}; expected one of {sorted(DIM_PRESETS)}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.duration_source not in ("oracle", "mas"):
            raise ConfigurationError(f"duration_source must be 'oracle' or 'mas', got {self.duration_source!r}")
        for name in ("learning_rate", "momentum", "grad_clip", "w_dur", "w_reg", "lambda_steepness"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigurationError(f"{name} must be finite and nonnegative, got {v}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.total_steps < 0:
            raise ConfigurationError("total_steps must be >= 0")

    def dim(self, name: str) -> int:
        v = getattr(self, name)
        return DIM_PRESETS[self.dims][name] if v is None else v

    def with_overrides(self, **kw) -> "TrainingConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        return cls(**d)


_FIELDS = {f.name: f for f in fields(TrainingConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigurationError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    raw = raw.strip()
    if raw.lower() == "none" and default is None:
        return None
    kind = type(default) if default is not None else int
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        return kind(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from None


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, overrides: Iterable[str] = ()) -> TrainingConfig:
    """Read a config file (or ``$MLTTS_CONFIG``) and apply ``key=value`` overrides."""
    values: dict = {}
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        p = Path(path)
        values.update(parse_assignments(p.read_text().splitlines(), str(p)))
    values.update(parse_assignments(overrides, "--set"))
    return TrainingConfig(**values)


def dumps_config(cfg: TrainingConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
