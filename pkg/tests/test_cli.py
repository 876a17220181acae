import subprocess
import sys

import pytest

from sdmtl.cli import main

SMALL = "d_f = 4\nheads = 2\nnum_inducing = 4\nlayers = 1\ntower_hidden = 8\nbatch_size = 256\n"


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out.strip().splitlines(), out.err


def summary(lines):
    return dict(kv.split("=", 1) for kv in lines[-1].split())


def test_verify_theory(capsys):
    code, lines, _ = run(capsys, "verify-theory", "--seeds", "100", "--tol", "1e-10")
    assert code == 0
    s = summary(lines)
    assert s["status"] == "pass" and s["checks"] == "400"
    assert lines[0].split() == ["seed", "theorem", "loss", "lhs", "rhs", "abs_diff"]


def test_verify_theory_tolerance_failure(capsys):
    code, lines, _ = run(capsys, "verify-theory", "--seeds", "3", "--tol", "-1")
    assert code == 3 and summary(lines)["status"] == "fail"


def test_usage_errors(capsys):
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys)[0] == 1
    code, lines, err = run(capsys, "train", "--epochs", "many")
    assert code == 1 and "usage" in err
    assert summary(lines)["status"] == "usage_error"


def test_missing_config(capsys, tmp_path):
    code, lines, err = run(capsys, "train", "--config", str(tmp_path / "missing.cfg"))
    assert code == 2 and "not found" in err
    assert summary(lines)["status"] == "error"


def test_unknown_config_key(capsys, tmp_path):
    (tmp_path / "bad.cfg").write_text("sigmaa = 1\n")
    code, _, err = run(capsys, "train", "--config", str(tmp_path / "bad.cfg"))
    assert code == 1 and "sigmaa" in err


def test_gen_data_deterministic(capsys, tmp_path):
    for name in ("a", "b"):
        code, lines, _ = run(capsys, "gen-data", "--seed", "7", "--rows", "300", "--out", str(tmp_path / name))
        assert code == 0 and summary(lines)["rows"] == "300"
    for f in ("train.csv", "valid.csv", "test.csv", "truth.csv", "schema.cfg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_eval_inspect(capsys, tmp_path, small_data):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL + "rows = 999\n")  # data-generation keys are accepted and ignored by train
    out = tmp_path / "run"
    code, lines, _ = run(capsys, "train", "--config", str(cfg), "--data", str(small_data), "--out", str(out),
                         "--epochs", "2", "--sigma", "0.5")
    assert code == 0
    s = summary(lines)
    assert s["epochs"] == "2" and len(s["valid_auc"].split(",")) == 2
    assert (out / "best.ckpt").exists() and (out / "metrics.csv").exists()

    code, lines, _ = run(capsys, "eval", "--config", str(cfg), "--data", str(small_data), "--out", str(out),
                         "--sigma", "0.5")
    assert code == 0
    s = summary(lines)
    assert {"auc_1", "auc_2", "logloss_1", "logloss_2", "violation_rate"} <= set(s)

    code, lines, _ = run(capsys, "inspect-selector", "--config", str(cfg), "--data", str(small_data),
                         "--out", str(out), "--sigma", "0.5", "--split", "valid")
    assert code == 0
    s = summary(lines)
    assert s["samples"] == "200"
    assert (out / "selection_rates.csv").read_text().splitlines()[0] == "sample_index,rate"


def test_eval_missing_checkpoint(capsys, tmp_path, small_data):
    code, _, err = run(capsys, "eval", "--data", str(small_data), "--out", str(tmp_path))
    assert code == 2 and "best.ckpt" in err


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "sdmtl", "verify-theory", "--seeds", "2"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0
    assert r.stdout.strip().splitlines()[-1].startswith("command=verify-theory")
