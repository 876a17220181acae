"""Per-sample selection rates of a trained APEM model, as CSV plus a text histogram.

    python scripts/selection_rates.py --run runs/e2e/apem --data data/funnel50k
"""

import argparse
from pathlib import Path

import numpy as np

from sdmtl import numerics as nx
from sdmtl.asrg import selection_rate_stats
from sdmtl.config import TrainConfig
from sdmtl.features import DatasetSchema, read_csv
from sdmtl.trainer import load_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--run", required=True, help="run directory holding best.ckpt")
    ap.add_argument("--data", required=True)
    ap.add_argument("--split", default="test")
    ap.add_argument("--threshold", type=float, default=0.5)
    args = ap.parse_args()

    cfg = TrainConfig(data_dir=args.data, out_dir=args.run)
    schema = DatasetSchema.load(Path(args.data) / "schema.cfg")
    model, ckpt = load_model(cfg, schema, Path(args.run) / "best.ckpt")
    data = read_csv(Path(args.data) / f"{args.split}.csv", schema)
    with nx.no_grad():
        z = np.concatenate([model.shared(data.rows[i:i + 4096], ckpt.step)["z"].value
                            for i in range(0, len(data), 4096)])
    stats = selection_rate_stats(z, args.threshold)
    out = Path(args.run) / "selection_rates.csv"
    stats.write_csv(out)
    width = 50 / max(stats.counts.max(), 1)
    for lo, hi, c in zip(stats.edges[:-1], stats.edges[1:], stats.counts):
        print(f"[{lo:.2f}, {hi:.2f}) {c:7d} {'#' * int(round(c * width))}")
    print(f"step={ckpt.step} mean={stats.mean:.4f} median={stats.median:.4f} csv={out}")


if __name__ == "__main__":
    main()
