"""Runtime configuration: defaults, an optional TOML file, then CLI flags."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    store_path: Optional[str] = None
    chunk_window: int = 40
    theta_link: float = 0.55
    tau: float = 0.5
    beta: float = 1.0
    alpha: float = 0.2
    flag_threshold: float = 0.8
    dup_threshold: float = 0.95
    uncertainty_temperature: float = 0.1
    horizon_days: float = 365.0
    rng_seed: Optional[int] = None
    embedder: str = "ngram-512"
    k: int = 5

    def __post_init__(self):
        checks = [
            (self.chunk_window >= 1, "chunk_window must be >= 1"),
            (0.0 <= self.theta_link <= 1.0, "theta_link must lie in [0, 1]"),
            (self.tau > 0, "tau must be > 0"),
            (self.beta >= 0, "beta must be >= 0"),
            (0 < self.alpha <= 1, "alpha must lie in (0, 1]"),
            (0.0 <= self.flag_threshold <= 1.0, "flag_threshold must lie in [0, 1]"),
            (0.0 <= self.dup_threshold <= 1.0, "dup_threshold must lie in [0, 1]"),
            (self.uncertainty_temperature > 0, "uncertainty_temperature must be > 0"),
            (self.horizon_days > 0, "horizon_days must be > 0"),
            (self.k >= 1, "k must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self) -> dict:
        return asdict(self)

    def merged(self, **overrides) -> "Config":
        known = {f.name for f in fields(self)}
        bad = sorted(set(overrides) - known)
        if bad:
            raise ConfigError(f"unknown config keys: {', '.join(bad)}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _coerce(key: str, value):
    default = getattr(Config(), key)
    if isinstance(default, bool) or value is None:
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if default is None:
        # optional fields: rng_seed is an int, store_path a string
        expected = int if key == "rng_seed" else str
    else:
        expected = type(default)
    if not isinstance(value, expected) or isinstance(value, bool):
        raise ConfigError(f"{key}: expected {expected.__name__}, got {type(value).__name__}")
    return value


def load_config(path=None, **overrides) -> Config:
    cfg = Config()
    if path is not None:
        p = Path(path)
        try:
            data = tomllib.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        known = {f.name for f in fields(Config)}
        bad = sorted(set(data) - known)
        if bad:
            raise ConfigError(f"unknown config keys: {', '.join(bad)}")
        cfg = replace(cfg, **{k: _coerce(k, v) for k, v in data.items()})
    return cfg.merged(**overrides)
