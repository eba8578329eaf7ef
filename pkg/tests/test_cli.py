import json
import subprocess
import sys
import time

import pytest

from noisygrade.cli import cli_main

TINY = {
    "method": "URL",
    "hyper": {"lr": 1e-3, "nl_lr": 1e-3, "M": 50, "nl_epochs": 3, "scl_epochs": 1, "mu_epochs": 2},
    "generator": {"n_samples": 200, "seed": 3},
    "n_test": 60,
    "seeds": [1, 2],
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return path


def test_gradcheck_passes_quickly(capsys):
    start = time.perf_counter()
    assert cli_main(["gradcheck"]) == 0
    assert time.perf_counter() - start < 10
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 8


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "missing.json"
    assert cli_main(["train", "--config", str(missing)]) != 0
    assert str(missing) in capsys.readouterr().err


def test_usage_errors_exit_2(capsys):
    assert cli_main(["frobnicate"]) == 2
    assert cli_main(["train", "--config", "x.json", "--bogus"]) == 2
    assert cli_main(["train", "--config", "x.json", "--views", "2"]) == 2
    assert cli_main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_train_flags_reach_the_report(config, tmp_path):
    out = tmp_path / "run"
    argv = ["train", "--config", str(config), "--out", str(out), "--seed", "7", "--views", "1",
            "--no-uni", "--reg-sign", "literal"]
    assert cli_main(argv) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["schema_version"] == 1
    assert [r["seed"] for r in report["runs"]] == [7]
    cfg = report["config"]
    assert cfg["hyper"]["views"] == "SV" and cfg["hyper"]["reg_sign"] == "literal"
    assert cfg["use_uni"] is False and cfg["use_con"] is True
    assert (out / "report_runs.csv").exists()
    assert (out / "checkpoints" / "seed7.json").exists()


def test_train_twice_gives_identical_reports(config, tmp_path):
    for name in ("a", "b"):
        assert cli_main(["train", "--config", str(config), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_generate_then_evaluate(config, tmp_path):
    data = tmp_path / "data"
    assert cli_main(["generate", "--config", str(config), "--out", str(data), "--n-test", "50"]) == 0
    assert (data / "train.csv").exists()
    cfg = dict(TINY, generator=None, train_path=str(data / "train.csv"), test_path=str(data / "test.csv"),
               seeds=[1])
    path = tmp_path / "from_csv.json"
    path.write_text(json.dumps(cfg))
    run = tmp_path / "run"
    assert cli_main(["train", "--config", str(path), "--out", str(run), "--method", "AVE"]) == 0
    trained = json.loads((run / "report.json").read_text())
    ev = tmp_path / "eval"
    argv = ["evaluate", "--checkpoint", str(run / "checkpoints" / "seed1.json"),
            "--data", str(data / "test.csv"), "--out", str(ev)]
    assert cli_main(argv) == 0
    evaluated = json.loads((ev / "report.json").read_text())
    assert evaluated["runs"][0]["tasks"] == trained["runs"][0]["tasks"]


def test_evaluate_missing_checkpoint(tmp_path, capsys):
    assert cli_main(["evaluate", "--checkpoint", str(tmp_path / "none.json"), "--data", "x.csv"]) == 1
    assert "none.json" in capsys.readouterr().err


def test_ablate_emits_eight_rows(config, tmp_path, capsys):
    out = tmp_path / "abl"
    assert cli_main(["ablate", "--config", str(config), "--seed", "1", "--out", str(out)]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if "5class.accuracy" in l]
    assert len(lines) == 8
    rows = (out / "ablation.csv").read_text().splitlines()[1:]
    assert len({r.split(",")[0] for r in rows}) == 8


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "noisygrade", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "gradcheck" in proc.stdout
