"""Synthetic conversion-funnel data with known per-step conditionals.

Each step i has a true conditional p_i(x) = P(T_i = 1 | T_{i-1} = 1, x) =
sigmoid(logit(base_i) + strength * u_i . phi(x)), where phi(x) sums a fixed
random vector per (field, bucket).  Labels are drawn as
o_i = o_{i-1} * Bernoulli(p_i(x)), so no row can break the funnel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import CATEGORICAL, NUMERIC, DatasetSchema, FeatureSpec, hash_category
from .metrics import auc

SPLITS = ("train", "valid", "test")
SPLIT_RATIO = (8, 1, 1)


@dataclass(frozen=True)
class DataGenConfig:
    rows: int = 50_000
    num_tasks: int = 2
    cat_fields: int = 8
    cat_cardinality: int = 12
    cat_vocab: int = 64
    num_fields: int = 2
    num_buckets: int = 8
    proj_dim: int = 8
    strength: float = 0.7
    base_rates: tuple[float, ...] = (0.3, 0.3)

    def validate(self) -> None:
        if self.rows < 10:
            raise ValueError("need at least 10 rows for an 8:1:1 split")
        if self.num_tasks < 2:
            raise ValueError("need at least 2 tasks")
        if self.cat_fields + self.num_fields < 1:
            raise ValueError("need at least one feature field")
        if self.cat_cardinality > self.cat_vocab:
            raise ValueError("cat_cardinality cannot exceed cat_vocab (buckets must be distinct)")
        if len(self.base_rates) != self.num_tasks:
            raise ValueError(f"need {self.num_tasks} base rates, got {len(self.base_rates)}")
        if not all(0.0 < b <= 1.0 for b in self.base_rates):
            raise ValueError("base rates must lie in (0, 1]")
        if self.strength < 0 or self.proj_dim < 1 or self.num_buckets < 1:
            raise ValueError("strength must be >= 0; proj_dim and num_buckets >= 1")

    def schema(self) -> DatasetSchema:
        feats = [FeatureSpec(f"c{f}", CATEGORICAL, self.cat_vocab) for f in range(self.cat_fields)]
        feats += [FeatureSpec(f"n{f}", NUMERIC, self.num_buckets) for f in range(self.num_fields)]
        return DatasetSchema(tuple(feats), self.num_tasks)


@dataclass
class FunnelGroundTruth:
    cfg: DataGenConfig
    seed: int
    tokens: list[list[str]] = field(default_factory=list)
    field_vectors: list[np.ndarray] = field(default_factory=list)  # per field: buckets x proj_dim
    u: np.ndarray | None = None  # num_tasks x proj_dim
    bias: np.ndarray | None = None

    def conditionals(self, codes: np.ndarray) -> np.ndarray:
        """codes: M x F per-field value indices -> M x N step conditionals p_i."""
        phi = sum(vec[codes[:, f]] for f, vec in enumerate(self.field_vectors))
        z = self.bias[None, :] + self.cfg.strength * phi @ self.u.T
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-z))


def _logit(p: float) -> float:
    return 30.0 if p >= 1.0 else math.log(p / (1.0 - p))


def _distinct_tokens(field_idx: int, n: int, vocab: int) -> list[str]:
    """n tokens whose hashed buckets are pairwise distinct, so hashing loses nothing."""
    out, used, j = [], set(), 0
    while len(out) < n:
        tok = f"f{field_idx}v{j}"
        b = hash_category(tok, vocab)
        if b not in used:
            used.add(b)
            out.append(tok)
        j += 1
    return out


def build_truth(cfg: DataGenConfig, seed: int) -> FunnelGroundTruth:
    cfg.validate()
    rng = np.random.default_rng(seed)
    F = cfg.cat_fields + cfg.num_fields
    gt = FunnelGroundTruth(cfg, seed)
    gt.tokens = [_distinct_tokens(f, cfg.cat_cardinality, cfg.cat_vocab) for f in range(cfg.cat_fields)]
    sizes = [cfg.cat_cardinality] * cfg.cat_fields + [cfg.num_buckets] * cfg.num_fields
    gt.field_vectors = [rng.normal(0.0, 1.0 / math.sqrt(F), size=(s, cfg.proj_dim)) for s in sizes]
    gt.u = rng.normal(0.0, 1.0, size=(cfg.num_tasks, cfg.proj_dim)) / math.sqrt(cfg.proj_dim) * 2.0
    gt.bias = np.array([_logit(b) for b in cfg.base_rates])
    return gt


def _numeric_value(bucket: int, jitter: float) -> float:
    # ln(1 + x) lands within 0.45 of the bucket centre, so log-round recovers it
    lo = 0.0 if bucket == 0 else -0.45
    return math.expm1(bucket + lo + (0.45 - lo) * jitter)


def split_bounds(m: int) -> dict[str, tuple[int, int]]:
    n_train = m * SPLIT_RATIO[0] // sum(SPLIT_RATIO)
    n_valid = m * SPLIT_RATIO[1] // sum(SPLIT_RATIO)
    return {"train": (0, n_train), "valid": (n_train, n_train + n_valid), "test": (n_train + n_valid, m)}


def generate(cfg: DataGenConfig, seed: int, out_dir) -> dict[str, Path]:
    """Write schema.cfg, train/valid/test.csv and truth.csv into ``out_dir``."""
    gt = build_truth(cfg, seed)
    rng = np.random.default_rng([seed, 1])
    M, N = cfg.rows, cfg.num_tasks
    sizes = [cfg.cat_cardinality] * cfg.cat_fields + [cfg.num_buckets] * cfg.num_fields
    codes = np.stack([rng.integers(0, s, size=M) for s in sizes], axis=1)
    jitter = rng.random(size=(M, cfg.num_fields))
    p = gt.conditionals(codes)
    draws = rng.random(size=(M, N)) < p
    labels = np.cumprod(draws, axis=1).astype(np.int64)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schema = cfg.schema()
    schema.save(out / "schema.cfg")
    header = ["sample_index"] + [f.name for f in schema.features] + schema.label_columns
    paths = {"schema": out / "schema.cfg"}
    for name, (lo, hi) in split_bounds(M).items():
        path = out / f"{name}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for j in range(lo, hi):
                cats = [gt.tokens[f][codes[j, f]] for f in range(cfg.cat_fields)]
                nums = [f"{_numeric_value(int(codes[j, cfg.cat_fields + f]), jitter[j, f]):.6f}"
                        for f in range(cfg.num_fields)]
                w.writerow([j, *cats, *nums, *labels[j].tolist()])
        paths[name] = path
    truth = out / "truth.csv"
    with truth.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index"] + [f"p_{i + 1}" for i in range(N)])
        for j in range(M):
            w.writerow([j, *(repr(float(v)) for v in p[j])])
    paths["truth"] = truth
    return paths


def read_truth(path) -> dict[int, np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        next(r)
        return {int(rec[0]): np.array([float(v) for v in rec[1:]]) for rec in r}


def _read_labels(path, num_tasks: int) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.DictReader(fh)
        idx, lab = [], []
        for rec in r:
            idx.append(int(rec["sample_index"]) if "sample_index" in rec else len(idx))
            lab.append([int(rec[f"t{i + 1}"]) for i in range(num_tasks)])
    return np.array(idx, dtype=np.int64), np.array(lab, dtype=np.int64).reshape(-1, num_tasks)


def funnel_check(dataset, num_tasks: int | None = None) -> int:
    """Rows with o_i > o_{i-1} for some adjacent pair.

    Accepts a label matrix, anything with a ``labels`` attribute, or a CSV path
    (read raw, without the loader's funnel filtering).
    """
    if isinstance(dataset, (str, Path)):
        if num_tasks is None:
            with Path(dataset).open(newline="", encoding="utf-8") as fh:
                header = next(csv.reader(fh), [])
            num_tasks = sum(1 for c in header if c.startswith("t") and c[1:].isdigit())
        labels = _read_labels(dataset, num_tasks)[1]
    else:
        labels = np.asarray(getattr(dataset, "labels", dataset))
    if labels.ndim != 2 or labels.shape[0] == 0 or labels.shape[1] < 2:
        return 0
    return int(np.any(labels[:, 1:] > labels[:, :-1], axis=1).sum())


def true_scores(truth: dict[int, np.ndarray], sample_index: np.ndarray, task: int) -> np.ndarray:
    """Entire-space P(T_task = 1 | x): product of step conditionals up to ``task`` (0-based)."""
    return np.array([np.prod(truth[j][:task + 1]) for j in sample_index])


def bayes_optimal_auc(data_dir, task: int, split: str = "test") -> float:
    """AUC of the true entire-space probability as a scorer on ``split`` (task is 0-based)."""
    data_dir = Path(data_dir)
    truth_path = data_dir / "truth.csv"
    if not truth_path.exists():
        raise FileNotFoundError(f"no ground truth at {truth_path}")
    truth = read_truth(truth_path)
    n = len(next(iter(truth.values())))
    idx, labels = _read_labels(data_dir / f"{split}.csv", n)
    return auc(true_scores(truth, idx, task), labels[:, task])
