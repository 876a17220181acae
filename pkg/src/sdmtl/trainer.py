"""Training loop, evaluation and checkpoint plumbing shared by every model."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .asrg import gamma_at
from .baselines import BaselineConfig, MmoeModel, SharedBottomModel, SingleTaskModel
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .features import Dataset, DatasetSchema, read_csv
from .losses import LossWeights, total_loss
from .metrics import auc, log_loss, violation_rate
from .pattern_selector import ApemConfig, ApemModel

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, nx.Tensor]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            if p.grad is None:
                # parameters untouched by this batch still decay their moments
                g = np.zeros_like(p.value)
            else:
                g = p.grad
            m = self.m.setdefault(name, np.zeros_like(p.value))
            v = self.v.setdefault(name, np.zeros_like(p.value))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def build_model(cfg: TrainConfig, schema: DatasetSchema, rng: np.random.Generator | None = None):
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    vocabs = tuple(schema.vocab_sizes)
    if cfg.model == "apem":
        return ApemModel(ApemConfig(vocabs, schema.num_tasks, cfg.d_f, cfg.heads, cfg.num_inducing,
                                    cfg.layers, cfg.tower_hidden, tuple(cfg.selector_hidden),
                                    cfg.shared_ps_projections, cfg.asrg_mode, cfg.use_ps), rng)
    bcfg = BaselineConfig(vocabs, schema.num_tasks, cfg.d_f, tuple(cfg.single_hidden),
                          tuple(cfg.bottom_hidden), cfg.num_experts, cfg.expert_dim, cfg.tower_hidden)
    return {"single": SingleTaskModel, "shared_bottom": SharedBottomModel, "mmoe": MmoeModel}[cfg.model](bcfg, rng)


def loss_weights(cfg: TrainConfig, num_tasks: int) -> LossWeights:
    w = list(cfg.task_weights) or [1.0] * num_tasks
    s = list(cfg.dep_weights) or [cfg.sigma] * (num_tasks - 1)
    return LossWeights(w, s)


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def data_order_hash(seed: int, epochs: int, n: int) -> str:
    h = hashlib.sha256()
    for e in range(epochs):
        h.update(epoch_order(seed, e, n).astype("<i8").tobytes())
    return h.hexdigest()


def predict(model, rows: np.ndarray, step: int, batch_size: int = 4096) -> np.ndarray:
    with nx.no_grad():
        return np.concatenate([model.forward(rows[i:i + batch_size], step).value
                               for i in range(0, len(rows), batch_size)], axis=0)


def evaluate(model, data: Dataset, step: int, batch_size: int = 4096) -> dict[str, float]:
    f = predict(model, data.rows, step, batch_size)
    out = {}
    for i in range(f.shape[1]):
        try:
            out[f"auc_{i + 1}"] = auc(f[:, i], data.labels[:, i])
        except ValueError:
            out[f"auc_{i + 1}"] = float("nan")
        out[f"logloss_{i + 1}"] = log_loss(f[:, i], data.labels[:, i])
    out["violation_rate"] = violation_rate(f)
    return out


def metrics_header(num_tasks: int) -> list[str]:
    return (["epoch", "step", "train_total"]
            + [f"train_main_{i + 1}" for i in range(num_tasks)]
            + [f"train_dep_{i + 2}" for i in range(num_tasks - 1)]
            + [f"valid_auc_{i + 1}" for i in range(num_tasks)]
            + ["valid_violation_rate"])


def _fmt(x: float) -> str:
    return repr(float(x))


def make_checkpoint(model, opt: Adam, cfg: TrainConfig, step: int, epoch: int, best: float) -> Checkpoint:
    blobs = {name: p.value.copy() for name, p in model.params.items()}
    for name in model.params:
        if name in opt.m:
            blobs[f"adam.m.{name}"] = opt.m[name].copy()
            blobs[f"adam.v.{name}"] = opt.v[name].copy()
    blobs["train.epoch"] = np.array([float(epoch)])
    blobs["train.best_score"] = np.array([best])
    return Checkpoint(blobs, cfg.hash(), step, gamma_at(step))


def restore(model, ckpt: Checkpoint, opt: Adam | None = None) -> dict:
    for name, p in model.params.items():
        if name not in ckpt.blobs:
            raise KeyError(f"checkpoint lacks parameter {name!r}")
        if ckpt.blobs[name].shape != p.shape:
            raise ValueError(f"parameter {name!r}: checkpoint shape {ckpt.blobs[name].shape} != {p.shape}")
        p.value = ckpt.blobs[name].copy()
        p.grad = None
    if opt is not None:
        opt.t = ckpt.step
        for name in model.params:
            if f"adam.m.{name}" in ckpt.blobs:
                opt.m[name] = ckpt.blobs[f"adam.m.{name}"].copy()
                opt.v[name] = ckpt.blobs[f"adam.v.{name}"].copy()
    return {
        "step": ckpt.step,
        "epoch": int(ckpt.blobs.get("train.epoch", np.array([0.0]))[0]),
        "best": float(ckpt.blobs.get("train.best_score", np.array([-np.inf]))[0]),
    }


@dataclass
class TrainResult:
    model: object
    step: int
    header: list[str] = field(default_factory=list)
    rows: list[list[str]] = field(default_factory=list)
    metrics_path: Path | None = None
    best_path: Path | None = None
    last_path: Path | None = None
    data_order_hash: str = ""


def load_splits(cfg: TrainConfig, splits=("train", "valid")) -> tuple[DatasetSchema, dict[str, Dataset]]:
    data_dir = Path(cfg.data_dir)
    schema = DatasetSchema.load(data_dir / "schema.cfg")
    return schema, {s: read_csv(data_dir / f"{s}.csv", schema, cfg.funnel_policy) for s in splits}


def train(cfg: TrainConfig, resume: str | Path | None = None,
          data: tuple[DatasetSchema, dict[str, Dataset]] | None = None) -> TrainResult:
    """Train ``cfg.model`` with Adam; append one metrics row per epoch.

    Writes ``metrics.csv``, ``last.ckpt`` and ``best.ckpt`` (highest mean valid
    AUC) under ``cfg.out_dir``.  With ``resume`` the run continues from a
    checkpoint written by an earlier call with the same config.
    """
    schema, splits = data if data is not None else load_splits(cfg)
    train_set, valid_set = splits["train"], splits["valid"]
    N = schema.num_tasks
    model = build_model(cfg, schema)
    opt = Adam(cfg.lr)
    weights = loss_weights(cfg, N)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"

    step, start_epoch, best = 0, 0, -math.inf
    if resume is not None:
        state = restore(model, load_checkpoint(resume, cfg.hash()), opt)
        step, start_epoch, best = state["step"], state["epoch"], state["best"]
    else:
        with metrics_path.open("w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerow(metrics_header(N))

    result = TrainResult(model, step, header=metrics_header(N), metrics_path=metrics_path,
                         data_order_hash=data_order_hash(cfg.seed, cfg.epochs, len(train_set)))
    for epoch in range(start_epoch, cfg.epochs):
        sums = np.zeros(1 + N + (N - 1))
        seen = 0
        for batch in train_set.batches(cfg.batch_size, epoch_order(cfg.seed, epoch, len(train_set))):
            probs = model.forward(batch.rows, step)
            report = total_loss(probs, batch.labels, weights)
            vals = [report.total.item()] + [t.item() for t in report.main] + [t.item() for t in report.dep]
            if not all(math.isfinite(v) for v in vals):
                raise TrainingDiverged(step)
            nx.zero_grads(model.params.values())
            nx.backward(report.total)
            opt.step(model.params)
            step += 1
            sums += np.array(vals) * batch.size
            seen += batch.size
        sums /= max(seen, 1)
        ev = evaluate(model, valid_set, step, cfg.eval_batch_size)
        aucs = [ev[f"auc_{i + 1}"] for i in range(N)]
        row = [str(epoch + 1), str(step)] + [_fmt(v) for v in sums] + [_fmt(a) for a in aucs] \
            + [_fmt(ev["violation_rate"])]
        with metrics_path.open("a", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerow(row)
        result.rows.append(row)
        log.info("epoch %d step %d loss %.5f valid auc %s", epoch + 1, step, sums[0],
                 " ".join(f"{a:.4f}" for a in aucs))
        score = float(np.nanmean(aucs)) if not all(map(math.isnan, aucs)) else -math.inf
        if score > best:
            best = score
            save_checkpoint(make_checkpoint(model, opt, cfg, step, epoch + 1, best), out / "best.ckpt")
            result.best_path = out / "best.ckpt"
        save_checkpoint(make_checkpoint(model, opt, cfg, step, epoch + 1, best), out / "last.ckpt")
        result.last_path = out / "last.ckpt"
    result.step = step
    if (out / "best.ckpt").exists():
        result.best_path = out / "best.ckpt"
    return result


def load_model(cfg: TrainConfig, schema: DatasetSchema, path) -> tuple[object, Checkpoint]:
    ckpt = load_checkpoint(path, cfg.hash())
    model = build_model(cfg, schema)
    restore(model, ckpt)
    if ckpt.gamma != gamma_at(ckpt.step):
        log.warning("%s: stored gamma %g differs from schedule value %g", path, ckpt.gamma, gamma_at(ckpt.step))
    return model, ckpt


def read_metrics(path) -> list[list[str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.reader(io.StringIO(fh.read())))
