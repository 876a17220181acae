"""Dataset schema, CSV ingestion and embedding lookup."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import numerics as nx

log = logging.getLogger(__name__)

CATEGORICAL = "categorical"
NUMERIC = "numeric"
POLICIES = ("drop_row", "reject_file")


class SchemaError(ValueError):
    pass


class MissingColumnError(ValueError):
    def __init__(self, column: str):
        super().__init__(f"missing column {column!r}")
        self.column = column


class LabelError(ValueError):
    def __init__(self, column: str, row: int, value: str):
        super().__init__(f"non-binary label {value!r} in column {column!r} at row {row}")
        self.column, self.row = column, row


class FunnelViolationError(ValueError):
    def __init__(self, row: int):
        super().__init__(f"funnel violation at row {row}: a later task fired without the earlier one")
        self.row = row


class ValueParseError(ValueError):
    def __init__(self, column: str, row: int, value: str):
        super().__init__(f"bad value {value!r} in column {column!r} at row {row}")
        self.column, self.row = column, row


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    vocab_size: int


@dataclass(frozen=True)
class DatasetSchema:
    features: tuple[FeatureSpec, ...]
    num_tasks: int

    def __post_init__(self):
        if self.num_tasks < 2:
            raise SchemaError(f"need at least 2 tasks, got {self.num_tasks}")
        if not self.features:
            raise SchemaError("schema has no feature columns")
        for f in self.features:
            if f.kind not in (CATEGORICAL, NUMERIC):
                raise SchemaError(f"feature {f.name!r}: unknown kind {f.kind!r}")
            if f.vocab_size < 1:
                raise SchemaError(f"feature {f.name!r}: vocab_size must be positive")

    @property
    def label_columns(self) -> list[str]:
        return [f"t{i + 1}" for i in range(self.num_tasks)]

    @property
    def vocab_sizes(self) -> list[int]:
        return [f.vocab_size for f in self.features]

    def to_text(self) -> str:
        lines = [f"tasks = {self.num_tasks}"]
        lines += [f"feature.{f.name} = {f.kind},{f.vocab_size}" for f in self.features]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "DatasetSchema":
        feats, tasks = [], None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchemaError(f"schema line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key == "tasks":
                tasks = int(val)
            elif key.startswith("feature."):
                kind, vocab = (s.strip() for s in val.split(","))
                feats.append(FeatureSpec(key[len("feature."):], kind, int(vocab)))
            else:
                raise SchemaError(f"schema line {lineno}: unknown key {key!r}")
        if tasks is None:
            raise SchemaError("schema is missing 'tasks'")
        return cls(tuple(feats), tasks)

    @classmethod
    def load(cls, path) -> "DatasetSchema":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class FeatureBatch:
    rows: np.ndarray  # B x F bucket ids
    labels: np.ndarray  # B x N in {0, 1}

    def __post_init__(self):
        self.rows.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def size(self) -> int:
        return self.rows.shape[0]


@dataclass
class Dataset:
    rows: np.ndarray
    labels: np.ndarray
    dropped: int = 0

    def __len__(self) -> int:
        return self.rows.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.rows[idx], self.labels[idx])

    def batches(self, batch_size: int, order: np.ndarray | None = None) -> Iterator[FeatureBatch]:
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            yield FeatureBatch(self.rows[idx], self.labels[idx])


def log_round_bucketize(x: float, vocab_size: int | None = None) -> int:
    """round(ln(1 + x)), clamped to the vocabulary."""
    if x < 0 or math.isnan(x):
        raise ValueError(f"log-round needs a nonnegative value, got {x}")
    b = int(np.rint(math.log1p(x)))
    if vocab_size is not None:
        b = min(b, vocab_size - 1)
    return b


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def hash_category(token: str, vocab_size: int) -> int:
    """64-bit FNV-1a over the UTF-8 bytes, finalized with a splitmix64 mix, mod vocab."""
    h = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    h ^= h >> 30
    h = (h * 0xBF58476D1CE4E5B9) & _MASK64
    h ^= h >> 27
    h = (h * 0x94D049BB133111EB) & _MASK64
    h ^= h >> 31
    return h % vocab_size


def check_funnel(labels: np.ndarray) -> np.ndarray:
    """Boolean mask of rows where some task fired without its predecessor."""
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[0] == 0 or labels.shape[1] < 2:
        return np.zeros(labels.shape[0] if labels.ndim else 0, dtype=bool)
    return np.any(labels[:, 1:] > labels[:, :-1], axis=1)


def read_csv(path, schema: DatasetSchema, policy: str = "drop_row") -> Dataset:
    if policy not in POLICIES:
        raise ValueError(f"unknown funnel policy {policy!r}; choose from {POLICIES}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumnError(schema.features[0].name) from None
        pos = {name: i for i, name in enumerate(header)}
        for col in [f.name for f in schema.features] + schema.label_columns:
            if col not in pos:
                raise MissingColumnError(col)
        fcols = [(pos[f.name], f) for f in schema.features]
        lcols = [(pos[c], c) for c in schema.label_columns]
        caches: list[dict[str, int]] = [{} for _ in fcols]

        rows, labels, dropped = [], [], 0
        for r, rec in enumerate(reader):
            lab = []
            for j, name in lcols:
                v = rec[j].strip()
                if v not in ("0", "1"):
                    raise LabelError(name, r, v)
                lab.append(int(v))
            if any(b > a for a, b in zip(lab, lab[1:])):
                if policy == "reject_file":
                    raise FunnelViolationError(r)
                dropped += 1
                continue
            ids = []
            for (j, spec), cache in zip(fcols, caches):
                tok = rec[j]
                b = cache.get(tok)
                if b is None:
                    if spec.kind == NUMERIC:
                        try:
                            b = log_round_bucketize(float(tok), spec.vocab_size)
                        except ValueError:
                            raise ValueParseError(spec.name, r, tok) from None
                    else:
                        b = hash_category(tok, spec.vocab_size)
                    cache[tok] = b
                ids.append(b)
            rows.append(ids)
            labels.append(lab)
    if dropped:
        log.info("%s: dropped %d funnel-violating rows", path.name, dropped)
    F, N = len(schema.features), schema.num_tasks
    return Dataset(
        np.asarray(rows, dtype=np.int64).reshape(-1, F),
        np.asarray(labels, dtype=np.int64).reshape(-1, N),
        dropped,
    )


def load_csv(path, schema: DatasetSchema, batch_size: int = 1024,
             policy: str = "drop_row") -> Iterator[FeatureBatch]:
    """Stream a CSV as fixed-size batches in file order."""
    yield from read_csv(path, schema, policy).batches(batch_size)


def init_embeddings(schema_or_vocabs, d_f: int, rng: np.random.Generator,
                    prefix: str = "emb") -> dict[str, nx.Tensor]:
    vocabs = schema_or_vocabs.vocab_sizes if isinstance(schema_or_vocabs, DatasetSchema) else schema_or_vocabs
    tables = {}
    for f, v in enumerate(vocabs):
        bound = math.sqrt(6.0 / (v + d_f))
        tables[f"{prefix}.{f}"] = nx.Tensor(rng.uniform(-bound, bound, size=(v, d_f)), requires_grad=True)
    return tables


def embed_lookup(rows: np.ndarray, tables: list[nx.Tensor]) -> nx.Tensor:
    """B x F ids -> B x F x d_f embeddings, one table per field."""
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[1] != len(tables):
        raise ValueError(f"expected B x {len(tables)} ids, got shape {rows.shape}")
    return nx.stack([nx.take_rows(t, rows[:, f]) for f, t in enumerate(tables)], axis=1)
