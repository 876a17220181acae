"""Shared helpers for the experiment scripts and the acceptance suite."""

from __future__ import annotations

import csv
import dataclasses
import time
from pathlib import Path

import numpy as np
from scipy import stats

from .config import TrainConfig
from .datagen import DataGenConfig, bayes_optimal_auc, generate
from .features import read_csv
from .trainer import evaluate, load_model, load_splits, train


def ensure_dataset(out_dir, seed: int = 0, cfg: DataGenConfig | None = None) -> Path:
    """Generate ``out_dir`` unless a complete dataset is already there."""
    out = Path(out_dir)
    if not all((out / f).exists() for f in ("schema.cfg", "train.csv", "valid.csv", "test.csv", "truth.csv")):
        generate(cfg or DataGenConfig(), seed, out)
    return out


def train_and_test(cfg: TrainConfig, data=None) -> dict:
    """Train, reload the best checkpoint and score it on the test split."""
    t0 = time.perf_counter()
    data = data or load_splits(cfg)
    res = train(cfg, data=data)
    schema = data[0]
    model, ckpt = load_model(cfg, schema, res.best_path)
    test = read_csv(Path(cfg.data_dir) / "test.csv", schema, cfg.funnel_policy)
    out = evaluate(model, test, ckpt.step, cfg.eval_batch_size)
    out["seconds"] = time.perf_counter() - t0
    out["step"] = ckpt.step
    return out


def bayes_aucs(data_dir, num_tasks: int) -> list[float]:
    return [bayes_optimal_auc(data_dir, i) for i in range(num_tasks)]


def run_ablation(data_dir, out_root, seeds=range(5), sigmas=(0.0, 1.0), **overrides) -> list[dict]:
    """One run per (seed, sigma) on a fixed dataset; returns flat result rows."""
    base = TrainConfig(data_dir=str(data_dir), **overrides)
    data = load_splits(base)
    rows = []
    for seed in seeds:
        for sigma in sigmas:
            cfg = dataclasses.replace(base, seed=seed, sigma=sigma,
                                      out_dir=str(Path(out_root) / f"seed{seed}_sigma{sigma:g}"))
            r = train_and_test(cfg, data)
            rows.append({"seed": seed, "sigma": sigma, **r})
    return rows


def write_rows(rows: list[dict], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def paired_table(rows: list[dict], base: float = 1.0, ablated: float = 0.0,
                 metrics=("auc_1", "auc_2", "violation_rate")) -> str:
    """Markdown table pairing each seed's full-loss run with its ablated twin.

    The last rows give the means, the mean paired difference and a paired
    t-test p-value for every metric.
    """
    by = {(r["seed"], r["sigma"]): r for r in rows}
    seeds = sorted({r["seed"] for r in rows})
    head = ["seed"] + [f"{m} ({lbl})" for m in metrics for lbl in ("full", "w/o dep")]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    a = {m: np.array([by[(s, base)][m] for s in seeds]) for m in metrics}
    b = {m: np.array([by[(s, ablated)][m] for s in seeds]) for m in metrics}
    digits = {"violation_rate": 5}
    for k, s in enumerate(seeds):
        cells = [str(s)] + [f"{v:.{digits.get(m, 4)}f}" for m in metrics for v in (a[m][k], b[m][k])]
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("| mean | " + " | ".join(f"{v:.{digits.get(m, 4)}f}" for m in metrics
                                         for v in (a[m].mean(), b[m].mean())) + " |")
    diff = []
    for m in metrics:
        d = a[m] - b[m]
        p = stats.ttest_rel(a[m], b[m]).pvalue if len(seeds) > 1 and np.any(d != d[0]) else float("nan")
        diff += [f"{d.mean():+.{digits.get(m, 4)}f}", f"p={p:.3g}"]
    lines.append("| full - w/o | " + " | ".join(diff) + " |")
    return "\n".join(lines)

