"""Pipeline configuration: one JSON document governs every stage.

Unknown keys are rejected by default (a typo in a hyperparameter name
invalidates an experiment); pass strict=False to ignore them. Every value
is validated with the offending key named in the error. Serialization
emits all keys, so parse(serialize(cfg)) round-trips exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

DEFAULT_OUT_DIR = "runs/latentdiff"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class BenchmarkConfig:
    """Built-in long-tailed dataset used when no CSVs are configured."""

    n_train: int = 5000
    n_test: int = 5000
    feature_dim: int = 8
    decay: float = 0.7
    noise: float = 0.05


@dataclass
class DataConfig:
    train_csv: str | None = None
    test_csv: str | None = None
    y_min: float | None = None
    y_max: float | None = None
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)


@dataclass
class BinsConfig:
    count: int = 20


@dataclass
class RegressorConfig:
    identity_encoder: bool = False
    hidden_dims: list[int] = field(default_factory=lambda: [256, 128, 64])
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3


@dataclass
class DiffusionConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    parameterization: str = "v"
    schedule: str = "cosine"
    timesteps: int = 50
    offset: float = 0.008
    ema_decay: float = 0.999
    ema_enabled: bool = True
    dropout: float = 0.1
    hidden_width: int = 256
    blocks: int = 3


@dataclass
class PriorityConfig:
    lam: float = 0.7  # serialized as "lambda"
    normalize_errors: bool = False


@dataclass
class GateConfig:
    enabled: bool = True
    percentile: float = 0.95
    min_samples: int = 5
    shrinkage: float = 0.1


@dataclass
class GenerationConfig:
    ratio: float = 0.2
    mode: str = "priority"
    max_attempts_factor: int = 10


@dataclass
class MixConfig:
    fraction: float = 0.2
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    per_epoch: list[float] | None = None
    retrain_from_scratch: bool = True


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: str = DEFAULT_OUT_DIR
    data: DataConfig = field(default_factory=DataConfig)
    bins: BinsConfig = field(default_factory=BinsConfig)
    regressor: RegressorConfig = field(default_factory=RegressorConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    priority: PriorityConfig = field(default_factory=PriorityConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    mix: MixConfig = field(default_factory=MixConfig)


# JSON key <-> dataclass field renames (lambda is a Python keyword).
_FIELD_TO_JSON = {"lam": "lambda"}
_JSON_TO_FIELD = {v: k for k, v in _FIELD_TO_JSON.items()}

_SECTIONS: dict[str, type] = {
    "data": DataConfig,
    "bins": BinsConfig,
    "regressor": RegressorConfig,
    "diffusion": DiffusionConfig,
    "priority": PriorityConfig,
    "gate": GateConfig,
    "generation": GenerationConfig,
    "mix": MixConfig,
}


def _check(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{key}: {message}")


def _validate_ranges(cfg: PipelineConfig) -> None:
    _check(cfg.bins.count >= 2, "bins.count", "must be >= 2")
    if cfg.data.y_min is not None and cfg.data.y_max is not None:
        _check(cfg.data.y_max > cfg.data.y_min, "data.y_max", "must exceed data.y_min")
    b = cfg.data.benchmark
    _check(b.n_train >= cfg.bins.count, "data.benchmark.n_train", "must be >= bins.count")
    _check(b.n_test >= 1, "data.benchmark.n_test", "must be >= 1")
    _check(b.feature_dim >= 1, "data.benchmark.feature_dim", "must be >= 1")
    _check(0 < b.decay <= 1, "data.benchmark.decay", "must be in (0, 1]")
    _check(b.noise >= 0, "data.benchmark.noise", "must be >= 0")
    r = cfg.regressor
    _check(all(d >= 1 for d in r.hidden_dims), "regressor.hidden_dims", "dims must be >= 1")
    _check(r.epochs >= 1, "regressor.epochs", "must be >= 1")
    _check(r.batch_size >= 1, "regressor.batch_size", "must be >= 1")
    _check(r.learning_rate > 0, "regressor.learning_rate", "must be > 0")
    d = cfg.diffusion
    _check(d.parameterization in ("v", "noise"), "diffusion.parameterization",
           "must be 'v' or 'noise'")
    _check(d.schedule in ("cosine", "linear"), "diffusion.schedule",
           "must be 'cosine' or 'linear'")
    _check(d.timesteps >= 1, "diffusion.timesteps", "must be >= 1")
    _check(0 <= d.offset < 1, "diffusion.offset", "must be in [0, 1)")
    _check(0 <= d.ema_decay <= 1, "diffusion.ema_decay", "must be in [0, 1]")
    _check(0 <= d.dropout < 1, "diffusion.dropout", "must be in [0, 1)")
    _check(d.hidden_width >= 1, "diffusion.hidden_width", "must be >= 1")
    _check(d.blocks >= 0, "diffusion.blocks", "must be >= 0")
    _check(d.epochs >= 1, "diffusion.epochs", "must be >= 1")
    _check(d.batch_size >= 1, "diffusion.batch_size", "must be >= 1")
    _check(d.learning_rate > 0, "diffusion.learning_rate", "must be > 0")
    _check(0 <= cfg.priority.lam <= 1, "priority.lambda", "must be in [0, 1]")
    g = cfg.gate
    _check(0 < g.percentile <= 1, "gate.percentile", "must be in (0, 1]")
    _check(g.min_samples >= 1, "gate.min_samples", "must be >= 1")
    _check(0 <= g.shrinkage <= 1, "gate.shrinkage", "must be in [0, 1]")
    gen = cfg.generation
    _check(gen.ratio >= 0, "generation.ratio", "must be >= 0")
    _check(gen.mode in ("priority", "uniform"), "generation.mode",
           "must be 'priority' or 'uniform'")
    _check(gen.max_attempts_factor >= 1, "generation.max_attempts_factor", "must be >= 1")
    m = cfg.mix
    _check(0 <= m.fraction < 1, "mix.fraction", "must be in [0, 1)")
    _check(m.epochs >= 1, "mix.epochs", "must be >= 1")
    _check(m.batch_size >= 1, "mix.batch_size", "must be >= 1")
    _check(m.learning_rate > 0, "mix.learning_rate", "must be > 0")
    if m.per_epoch is not None:
        for i, v in enumerate(m.per_epoch):
            _check(0 <= v < 1, f"mix.per_epoch[{i}]", "must be in [0, 1)")


def _coerce(value: Any, target_type: Any, key: str) -> Any:
    if value is None:
        return None
    if target_type is float:
        _check(isinstance(value, (int, float)) and not isinstance(value, bool),
               key, f"expected a number, got {value!r}")
        return float(value)
    if target_type is int:
        _check(isinstance(value, int) and not isinstance(value, bool),
               key, f"expected an integer, got {value!r}")
        return value
    if target_type is bool:
        _check(isinstance(value, bool), key, f"expected a boolean, got {value!r}")
        return value
    if target_type is str:
        _check(isinstance(value, str), key, f"expected a string, got {value!r}")
        return value
    return value


def _parse_section(cls: type, doc: dict, prefix: str, strict: bool):
    obj = cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object, got {doc!r}")
    known = {f.name: f for f in fields(cls)}
    json_names = {_FIELD_TO_JSON.get(name, name): name for name in known}
    for json_key, value in doc.items():
        full = f"{prefix}.{json_key}" if prefix else json_key
        if json_key not in json_names:
            if strict:
                raise ConfigError(f"unknown key {full!r}")
            continue
        name = json_names[json_key]
        current = getattr(obj, name)
        if isinstance(current, (BenchmarkConfig,)):
            setattr(obj, name, _parse_section(type(current), value, full, strict))
        elif name == "hidden_dims":
            _check(isinstance(value, list) and all(
                isinstance(v, int) and not isinstance(v, bool) for v in value),
                full, "expected a list of integers")
            setattr(obj, name, list(value))
        elif name == "per_epoch":
            if value is not None:
                _check(isinstance(value, list) and all(
                    isinstance(v, (int, float)) and not isinstance(v, bool) for v in value),
                    full, "expected a list of numbers or null")
                value = [float(v) for v in value]
            setattr(obj, name, value)
        elif name in ("train_csv", "test_csv"):
            if value is not None:
                _check(isinstance(value, str), full, "expected a path string or null")
            setattr(obj, name, value)
        elif name in ("y_min", "y_max"):
            setattr(obj, name, _coerce(value, float, full) if value is not None else None)
        else:
            setattr(obj, name, _coerce(value, type(current), full))
    return obj


def parse_config(doc: dict | str | Path, strict: bool = True) -> PipelineConfig:
    """Build a full config from a JSON document; absent keys take defaults."""
    if isinstance(doc, (str, Path)):
        path = Path(doc)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    cfg = PipelineConfig()
    for json_key, value in doc.items():
        if json_key == "seed":
            cfg.seed = _coerce(value, int, "seed")
        elif json_key == "out_dir":
            cfg.out_dir = _coerce(value, str, "out_dir")
        elif json_key in _SECTIONS:
            setattr(cfg, json_key, _parse_section(_SECTIONS[json_key], value, json_key, strict))
        elif strict:
            raise ConfigError(f"unknown key {json_key!r}")
    _validate_ranges(cfg)
    return cfg


def _section_to_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = _FIELD_TO_JSON.get(f.name, f.name)
        if hasattr(value, "__dataclass_fields__"):
            out[key] = _section_to_dict(value)
        else:
            out[key] = value
    return out


def serialize_config(cfg: PipelineConfig) -> dict:
    """Full JSON document with every key present."""
    out: dict = {"seed": cfg.seed, "out_dir": cfg.out_dir}
    for key in _SECTIONS:
        out[key] = _section_to_dict(getattr(cfg, key))
    return out


def config_to_json(cfg: PipelineConfig) -> str:
    return json.dumps(serialize_config(cfg), sort_keys=True, indent=2) + "\n"
