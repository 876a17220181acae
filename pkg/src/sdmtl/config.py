"""Run configuration and the flat ``key = value`` config-file format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .datagen import DataGenConfig

MODELS = ("apem", "single", "shared_bottom", "mmoe")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model: str = "apem"
    batch_size: int = 1024
    d_f: int = 18
    heads: int = 2
    num_inducing: int = 64
    layers: int = 4
    lr: float = 1e-3
    epochs: int = 10
    seed: int = 0
    task_weights: tuple[float, ...] = ()
    sigma: float = 1.0
    dep_weights: tuple[float, ...] = ()
    tower_hidden: int = 64
    selector_hidden: tuple[int, ...] = ()
    shared_ps_projections: bool = False
    asrg_mode: str = "asrg"
    use_ps: bool = True
    single_hidden: tuple[int, ...] = (256, 128, 64)
    bottom_hidden: tuple[int, ...] = (128,)
    num_experts: int = 4
    expert_dim: int = 32
    funnel_policy: str = "drop_row"
    eval_batch_size: int = 4096
    data_dir: str = "data"
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise ConfigError("batch_size must be >= 1, epochs >= 0, lr > 0")

    def hash(self) -> bytes:
        """sha256 over the fields that shape the model and its optimisation."""
        skip = {"epochs", "data_dir", "out_dir", "eval_batch_size"}
        body = {k: v for k, v in dataclasses.asdict(self).items() if k not in skip}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).digest()


def _convert(tp, raw: str, key: str):
    origin = typing.get_origin(tp)
    try:
        if tp is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if origin is tuple:
            (inner, _) = typing.get_args(tp)
            parts = [p for p in raw.replace(" ", "").split(",") if p]
            return tuple(inner(p) for p in parts)
        return tp(raw.strip())
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for key {key!r}") from None


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def build(cls, values: dict[str, str | object]):
    """Construct ``cls`` from string (or already typed) values; unknown keys are errors."""
    types = _field_types(cls)
    kwargs = {}
    for k, v in values.items():
        if k not in types:
            raise ConfigError(f"unknown config key {k!r}")
        kwargs[k] = _convert(types[k], v, k) if isinstance(v, str) else v
    return cls(**kwargs)


def split_keys(values: dict[str, str]) -> tuple[dict[str, str], dict[str, str]]:
    """Partition a flat key set into (train keys, data-generation keys)."""
    tkeys, gkeys = set(_field_types(TrainConfig)), set(_field_types(DataGenConfig))
    train, gen = {}, {}
    for k, v in values.items():
        if k in tkeys:
            train[k] = v
        elif k in gkeys:
            gen[k] = v
        else:
            raise ConfigError(f"unknown config key {k!r}")
    return train, gen


def load_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_kv(path.read_text(encoding="utf-8"))


def to_text(cfg) -> str:
    lines = []
    for k, v in dataclasses.asdict(cfg).items():
        if isinstance(v, (tuple, list)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
