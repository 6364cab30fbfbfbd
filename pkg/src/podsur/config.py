"""Pipeline configuration loaded from TOML documents."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .snapshots import ParameterRanges
from .surrogate import TrainConfig

__all__ = ["DomainConfig", "PipelineConfig", "load_config", "config_hash", "to_dict"]


@dataclass(frozen=True)
class DomainConfig:
    lx: float = 10.0
    ly: float = 5.0
    nx: int = 200
    ny: int = 100
    corner_policy: str = "inflow"

    def __post_init__(self):
        if self.lx <= 0 or self.ly <= 0 or self.nx < 1 or self.ny < 1:
            raise ValueError(f"invalid domain {self}")
        if self.corner_policy not in ("inflow", "wall"):
            raise ValueError("corner_policy must be 'inflow' or 'wall'")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run depends on. Every field has a default."""

    output_dir: str = "out"
    domain: DomainConfig = field(default_factory=DomainConfig)
    ranges: ParameterRanges = field(default_factory=ParameterRanges)
    kappa_scale: str = "linear"
    n_snapshots: int = 500
    source: str = "sinsin"
    fem_tol: float = 1e-10
    workers: int = 1
    eta: float = 0.999
    center: bool = False
    hidden: tuple[int, ...] = (100, 100)
    log_kappa: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    sampling_seed: int = 0
    init_seed: int = 0
    n_test: int = 100
    test_seed: int = 1
    n_bench: int = 20
    bench_seed: int = 2

    def __post_init__(self):
        if self.n_snapshots < 1:
            raise ValueError("n_snapshots must be >= 1")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be >= 1")
        if self.n_test < 0 or self.n_bench < 1:
            raise ValueError("n_test must be >= 0 and n_bench >= 1")
        if self.kappa_scale not in ("linear", "log"):
            raise ValueError("kappa_scale must be 'linear' or 'log'")

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        return dataclasses.replace(self, **{k: v for k, v in kwargs.items() if v is not None})


_SECTIONS = {
    "domain": DomainConfig,
    "train": TrainConfig,
}


def _from_mapping(data: dict) -> PipelineConfig:
    data = dict(data)
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            names = {f.name for f in dataclasses.fields(cls)}
            bad = set(value) - names
            if bad:
                raise ValueError(f"unknown keys in [{key}]: {sorted(bad)}")
            kwargs[key] = cls(**value)
        elif key == "ranges":
            kwargs[key] = ParameterRanges(**{k: tuple(v) for k, v in value.items()})
        elif key == "hidden":
            kwargs[key] = tuple(int(v) for v in value)
        else:
            kwargs[key] = value
    return PipelineConfig(**kwargs)


def load_config(path=None, **overrides) -> PipelineConfig:
    """Read a TOML config (or start from defaults when ``path`` is None)."""
    data = {}
    if path is not None:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    cfg = _from_mapping(data)
    return cfg.with_overrides(**overrides)


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    return obj


def config_hash(obj) -> str:
    text = json.dumps(to_dict(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def output_path(cfg: PipelineConfig, name: str) -> Path:
    return Path(cfg.output_dir) / name
