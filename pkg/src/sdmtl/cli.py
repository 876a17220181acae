"""Command-line entry point: ``sdmtl <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 verify-theory
tolerance failure.  The last stdout line of every subcommand is a
``key=value`` summary.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .asrg import selection_rate_stats
from .config import ConfigError, TrainConfig
from .datagen import DataGenConfig, generate
from .features import DatasetSchema, read_csv
from .numerics import no_grad
from .theory import run_suite
from .trainer import evaluate, load_model, train

log = logging.getLogger("sdmtl")

LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _summary(**kv) -> None:
    print(" ".join(f"{k}={v}" for k, v in kv.items()))


def _overrides(args, mapping: dict[str, str]) -> dict[str, object]:
    out = {}
    for flag, key in mapping.items():
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = v
    return out


def _file_values(path) -> tuple[dict[str, str], dict[str, str]]:
    return cfgmod.split_keys(cfgmod.load_config_file(path)) if path else ({}, {})


def train_config(args) -> TrainConfig:
    tvals, _ = _file_values(args.config)
    tvals.update(_overrides(args, {"seed": "seed", "model": "model", "sigma": "sigma",
                                   "epochs": "epochs", "out": "out_dir", "data": "data_dir"}))
    return cfgmod.build(TrainConfig, tvals)


def cmd_gen_data(args) -> int:
    _, gvals = _file_values(args.config)
    if args.rows is not None:
        gvals["rows"] = args.rows
    cfg = cfgmod.build(DataGenConfig, gvals)
    seed = 0 if args.seed is None else args.seed
    out = args.out or "data"
    paths = generate(cfg, seed, out)
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    _summary(command="gen-data", seed=seed, rows=cfg.rows, out=out)
    return 0


def cmd_train(args) -> int:
    cfg = train_config(args)
    res = train(cfg, resume=args.resume)
    last = dict(zip(res.header, res.rows[-1])) if res.rows else {}
    aucs = [v for k, v in last.items() if k.startswith("valid_auc_")]
    _summary(command="train", model=cfg.model, epochs=cfg.epochs, step=res.step,
             best=res.best_path or "none", metrics=res.metrics_path,
             valid_auc=",".join(aucs) or "nan")
    return 0


def _load_for_eval(args):
    cfg = train_config(args)
    schema = DatasetSchema.load(Path(cfg.data_dir) / "schema.cfg")
    ckpt_path = args.checkpoint or Path(cfg.out_dir) / "best.ckpt"
    model, ckpt = load_model(cfg, schema, ckpt_path)
    data = read_csv(Path(cfg.data_dir) / f"{args.split}.csv", schema, cfg.funnel_policy)
    return cfg, schema, model, ckpt, data


def cmd_eval(args) -> int:
    cfg, schema, model, ckpt, data = _load_for_eval(args)
    ev = evaluate(model, data, ckpt.step, cfg.eval_batch_size)
    _summary(command="eval", split=args.split, step=ckpt.step,
             **{k: f"{v:.6f}" for k, v in ev.items()})
    return 0


def cmd_verify_theory(args) -> int:
    rows = run_suite(args.seeds)
    print(f"{'seed':>5} {'theorem':>7} {'loss':>8} {'lhs':>22} {'rhs':>22} {'abs_diff':>10}")
    for r in rows:
        print(f"{r.seed:>5} {r.theorem:>7} {r.loss:>8} {r.lhs:>22.16g} {r.rhs:>22.16g} {r.diff:>10.3e}")
    worst = max(r.diff for r in rows)
    ok = worst <= args.tol
    _summary(command="verify-theory", checks=len(rows), max_abs_diff=f"{worst:.3e}", tol=args.tol,
             status="pass" if ok else "fail")
    return 0 if ok else 3


def cmd_inspect_selector(args) -> int:
    cfg, schema, model, ckpt, data = _load_for_eval(args)
    if cfg.model != "apem" or cfg.asrg_mode != "asrg":
        raise UsageError("inspect-selector needs an apem model with the dynamic selector")
    with no_grad():
        z = np.concatenate([model.shared(data.rows[i:i + cfg.eval_batch_size], ckpt.step)["z"].value
                            for i in range(0, len(data), cfg.eval_batch_size)])
    stats = selection_rate_stats(z)
    out = args.csv or str(Path(cfg.out_dir) / "selection_rates.csv")
    stats.write_csv(out)
    _summary(command="inspect-selector", samples=len(stats.rates), mean=f"{stats.mean:.6f}",
             median=f"{stats.median:.6f}", out=out)
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdmtl", description="Sequential-dependence multi-task learning toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, *, train_flags=True):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        if train_flags:
            sp.add_argument("--model")
            sp.add_argument("--sigma", type=float)
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--data", help="directory holding schema.cfg and split CSVs")

    g = sub.add_parser("gen-data", help="write a synthetic funnel dataset")
    common(g, train_flags=False)
    g.add_argument("--rows", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    common(t)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate a checkpoint"),
                                 ("inspect-selector", cmd_inspect_selector, "selection-rate CSV")):
        e = sub.add_parser(name, help=helptext)
        common(e)
        e.add_argument("--checkpoint")
        e.add_argument("--split", default="test", choices=("train", "valid", "test"))
        e.set_defaults(func=func)
    e.add_argument("--csv", help="selection-rate CSV path (default: <out>/selection_rates.csv)")

    v = sub.add_parser("verify-theory", help="exact check of the reweighting identities")
    v.add_argument("--seeds", type=int, default=100)
    v.add_argument("--tol", type=float, default=1e-10)
    v.set_defaults(func=cmd_verify_theory)
    return p


def main(argv=None) -> int:
    level = os.environ.get("SDMTL_LOG", "quiet").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError(parser.format_usage())
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(str(e).rstrip(), file=sys.stderr)
        _summary(status="usage_error")
        return 1
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        print(f"sdmtl: error: {e}", file=sys.stderr)
        _summary(status="error", kind=type(e).__name__)
        return 2


if __name__ == "__main__":
    sys.exit(main())
