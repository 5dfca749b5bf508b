import json

import numpy as np
import pytest

from drpl.cli import main
from drpl.dataset import load_dataset

DETECT = ["--classes", "3", "--per-class", "100", "--dims", "8", "--test-per-class", "30",
          "--warmup", "5", "--epochs-stage1", "15", "--epochs-stage2", "8", "--epochs-stage3", "4"]
SMALL = ["--classes", "3", "--per-class", "60", "--dims", "8", "--test-per-class", "30",
         "--warmup", "2", "--epochs-stage1", "5", "--epochs-stage2", "4", "--epochs-stage3", "4",
         "--epochs-baseline", "4"]


def test_run_writes_report(tmp_path):
    out = tmp_path / "run"
    code = main(["run", "--mode", "drpl", "--noise", "uniform-id", "--rate", "0.4", "--seed", "7",
                 "--out", str(out), *DETECT])
    assert code == 0
    for name in ("report.json", "epochs.csv", "samples.csv", "roc_stage1.csv", "roc_stage2.csv", "experiment.json"):
        assert (out / name).is_file()
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == 7 and report["mode"] == "drpl"
    assert report["config"]["gamma1"] == 0.05 and report["config"]["gamma2"] == 0.5


def test_run_is_byte_reproducible(tmp_path):
    args = ["run", "--noise", "pairwise", "--rate", "0.3", "--seed", "1", *DETECT]
    main([*args, "--out", str(tmp_path / "a")])
    main([*args, "--out", str(tmp_path / "b")])
    for name in ("report.json", "samples.csv", "epochs.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gen_then_corrupt_zero_rate(tmp_path):
    assert main(["gen", "--classes", "3", "--per-class", "20", "--dims", "4", "--out", str(tmp_path / "g")]) == 0
    src = tmp_path / "g" / "train"
    assert main(["corrupt", "--data", str(src), "--noise", "uniform-id", "--rate", "0",
                 "--out", str(tmp_path / "c")]) == 0
    for name in ("features.bin", "labels.bin", "meta.json"):
        assert (src / name).read_bytes() == (tmp_path / "c" / name).read_bytes()


def test_corrupt_keeps_truth_out_of_payload(tmp_path):
    main(["gen", "--classes", "3", "--per-class", "40", "--dims", "4", "--out", str(tmp_path / "g")])
    out = tmp_path / "c"
    assert main(["corrupt", "--data", str(tmp_path / "g" / "train"), "--noise", "nonuniform-id",
                 "--rate", "0.5", "--seed", "2", "--out", str(out)]) == 0
    ds = load_dataset(out)
    assert ds.true is None and ds.clean is None
    truth = json.loads((out / "truth.json").read_text())
    clean = np.array(truth["clean"], dtype=bool)
    assert (~clean).sum() == 60
    np.testing.assert_array_equal(ds.observed[clean], np.array(truth["true_labels"])[clean])
    assert (out / "transition.json").is_file()


def test_sweep_counts_directories(tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", "--modes", "ce-baseline", "--noise", "uniform-id", "--rates", "0.2", "0.4",
                 "--seeds", "0", "1", "--out", str(out), *SMALL])
    assert code == 0
    dirs = sorted(p.name for p in out.iterdir())
    assert len(dirs) == 4
    assert all((out / d / "report.json").is_file() for d in dirs)


def test_eval_recomputes_metrics(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--noise", "uniform-id", "--rate", "0.4", "--out", str(out), *DETECT]) == 0
    capsys.readouterr()
    assert main(["eval", "--report", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    report = json.loads((out / "report.json").read_text())
    assert printed["stage2"]["auc"] == pytest.approx(report["detection"]["stage2"]["auc"])
    assert (out / "metrics.json").is_file()


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lambda1": 0.25, "lambda2": 0.5, "mode": "mixup-baseline"}))
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--lambda2", "0.75", "--out", str(out), *SMALL]) == 0
    config = json.loads((out / "report.json").read_text())["config"]
    assert (config["lambda1"], config["lambda2"], config["mode"]) == (0.25, 0.75, "mixup-baseline")
    assert config["lr"] == 0.1


@pytest.mark.parametrize("argv", [
    ["run", "--bogus-flag"],
    ["run", "--noise", "uniform-id", "--rate", "1.5", "--out", "x"],
    ["run", "--gamma1", "0", "--out", "x"],
    ["corrupt", "--data", "/nonexistent", "--out", "x"],
])
def test_errors_exit_nonzero(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) != 0
    assert capsys.readouterr().err


def test_starved_stage1_reports_clean_set_diagnostic(tmp_path, capsys):
    code = main(["run", "--noise", "uniform-id", "--rate", "0.4", "--out", str(tmp_path / "r"), *SMALL])
    assert code == 1
    assert "selected as clean" in capsys.readouterr().err
