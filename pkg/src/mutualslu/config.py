"""Run configuration: hyperparameters, ablation switches, config-file parsing.

Config files are flat ``key=value`` text: one assignment per line, ``#``
comments and blank lines ignored, keys named exactly like TrainConfig
fields. Command-line flags override file values, which override defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

__all__ = ["TrainConfig", "ConfigError", "parse_config_file"]


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


@dataclass
class TrainConfig:
    # model dimensions (desk-scale defaults; paper_scale() for the 256-wide profile)
    emb_dim: int = 32
    lstm_dim: int = 32          # BiLSTM output width, split across directions
    attn_dim: int = 32
    hidden_dim: int = 32        # task features, graph node states, label embeddings
    heads: int = 4
    layers: int = 2
    window: int = 1
    vote_threshold: float = 0.5
    leaky_slope: float = 0.2
    # objective
    gamma: float = 0.9
    beta_intent: float = 1e-6
    beta_slot: float = 1.0
    # optimizer
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    # loop
    epochs: int = 300
    batch_size: int = 16        # gradient-accumulation window, in utterances
    seed: int = 0
    min_token_freq: int = 1
    # ablations
    collapse_relations: bool = False
    no_s2i_guidance: bool = False
    no_i2s_guidance: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.beta_intent < 0 or self.beta_slot < 0:
            raise ConfigError("margin coefficients must be nonnegative")
        if self.hidden_dim % self.heads != 0:
            raise ConfigError(
                f"hidden_dim ({self.hidden_dim}) must be divisible by heads ({self.heads})")
        if self.lstm_dim % 2 != 0:
            raise ConfigError(f"lstm_dim must be even, got {self.lstm_dim}")
        if self.window < 0:
            raise ConfigError(f"window must be >= 0, got {self.window}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        """256-wide profile matching the published MixATIS setup."""
        base = dict(emb_dim=256, lstm_dim=256, attn_dim=256, hidden_dim=256)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(field: dataclasses.Field, raw: str):
    if field.type in ("bool", bool):
        word = raw.strip().lower()
        if word not in _BOOL_WORDS:
            raise ConfigError(f"{field.name}: expected a boolean, got {raw!r}")
        return _BOOL_WORDS[word]
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    return raw


def parse_config_file(path: str | Path) -> dict:
    """Read a key=value config file into a dict of typed TrainConfig values."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values: dict = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in fields:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _coerce(fields[key], raw.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values
