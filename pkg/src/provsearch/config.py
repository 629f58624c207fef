"""Flat ``key = value`` pipeline configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # artifact paths
    logs: Optional[str] = None
    graph: Optional[str] = None
    egos: Optional[str] = None
    samples: Optional[str] = None
    model: Optional[str] = None
    index: Optional[str] = None
    store: Optional[str] = None  # collapsed ego-graphs used to assemble matches
    loss_trace: Optional[str] = None
    # graph construction
    profile: str = "linux"
    window_seconds: int = 600
    sink_degree_percentile: float = 99.9
    sink_degree_absolute: Optional[int] = None
    k: int = 3
    # stage toggles (ablation axes)
    simplify: bool = True
    version: bool = True
    reduce: bool = True
    dedup: bool = True
    # sampling
    target_edges_min: int = 10
    target_edges_max: int = 15
    negative_pool_min: int = 3
    negative_retries: int = 32
    train_fraction: float = 0.8
    test_pairs: int = 2000
    # model and training
    d: int = 256
    hidden: int = 256
    alpha: float = 1.0
    batch_size: int = 1024
    num_batches: int = 400
    lr: float = 1e-3
    momentum: float = 0.9
    optimizer: str = "momentum"
    dtype: str = "float32"
    # search
    tau_ovp: float = 0.2
    tau: float = 0.5
    prune_by_abstraction: bool = False
    seed: int = 0
    threads: int = 0

    def validate(self) -> "PipelineConfig":
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.tau_ovp < 0:
            raise ConfigError("tau_ovp must be >= 0")
        if not 0 < self.tau <= 1:
            raise ConfigError("tau must be in (0, 1]")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError("batch_size must be a positive even number")
        if not 1 <= self.target_edges_min <= self.target_edges_max:
            raise ConfigError("target edge range is empty")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.optimizer not in ("adam", "momentum"):
            raise ConfigError("optimizer must be adam or momentum")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must be in (0, 1)")
        if self.profile not in ("linux", "windows", "freebsd") and not self.profile.endswith(".txt"):
            raise ConfigError(f"unknown OS profile {self.profile!r}")
        return self

    @property
    def window_ns(self) -> int:
        return int(self.window_seconds) * 10**9

    def set(self, key: str, raw) -> None:
        key = key.strip().replace("-", "_")
        types = {f.name: f.type for f in fields(self)}
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(self, key, _coerce(key, types[key], raw))

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                lines.append(f"{f.name} = {str(value).lower() if isinstance(value, bool) else value}")
        return "\n".join(lines) + "\n"


def _coerce(key, typ, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    typ = str(typ)
    if typ.startswith("Optional") and raw.lower() in ("", "none", "null"):
        return None
    try:
        if "bool" in typ:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "int" in typ:
            return int(raw)
        if "float" in typ:
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    cfg = dataclasses.replace(base) if base else PipelineConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        cfg.set(key, value)
    return cfg


def load_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
