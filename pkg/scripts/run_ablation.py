"""Dependence-loss ablation: sigma in {0, 1} over several seeds on one synthetic dataset.

Writes results.csv and a paired comparison table (with paired t-test
p-values) to the output directory.

    python scripts/run_ablation.py --data data/funnel50k --out runs/ablation --epochs 4
"""

import argparse
import logging
from pathlib import Path

from sdmtl.experiments import ensure_dataset, paired_table, run_ablation, write_rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", default="data/funnel50k")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--data-seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    data = ensure_dataset(args.data, args.data_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_ablation(data, out, seeds=range(args.seeds), epochs=args.epochs)
    write_rows(rows, out / "results.csv")
    table = paired_table(rows)
    (out / "paired_table.md").write_text(table + "\n", encoding="utf-8")
    print(table)


if __name__ == "__main__":
    main()
