"""Train APEM (and optionally the baselines) on a synthetic funnel dataset and
compare test AUC with the Bayes-optimal scorer.

    python scripts/run_end_to_end.py --models apem,mmoe --epochs 10
"""

import argparse
import logging
from pathlib import Path

from sdmtl.config import TrainConfig
from sdmtl.datagen import DataGenConfig
from sdmtl.experiments import bayes_aucs, ensure_dataset, train_and_test, write_rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", default="data/funnel50k")
    ap.add_argument("--out", default="runs/e2e")
    ap.add_argument("--rows", type=int, default=50_000)
    ap.add_argument("--models", default="apem")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    data = ensure_dataset(args.data, 0, DataGenConfig(rows=args.rows))
    bayes = bayes_aucs(data, 2)
    rows = []
    for model in args.models.split(","):
        cfg = TrainConfig(model=model, epochs=args.epochs, seed=args.seed, data_dir=str(data),
                          out_dir=str(Path(args.out) / model))
        r = train_and_test(cfg)
        rows.append({"model": model, **r, **{f"bayes_{i + 1}": b for i, b in enumerate(bayes)}})
    Path(args.out).mkdir(parents=True, exist_ok=True)
    write_rows(rows, Path(args.out) / "results.csv")
    print(f"{'model':<14}{'auc_1':>8}{'auc_2':>8}{'ratio_1':>9}{'ratio_2':>9}{'viol':>8}{'secs':>7}")
    for r in rows:
        print(f"{r['model']:<14}{r['auc_1']:8.4f}{r['auc_2']:8.4f}{r['auc_1'] / bayes[0]:9.3f}"
              f"{r['auc_2'] / bayes[1]:9.3f}{r['violation_rate']:8.4f}{r['seconds']:7.0f}")
    print(f"{'bayes':<14}{bayes[0]:8.4f}{bayes[1]:8.4f}")


if __name__ == "__main__":
    main()
