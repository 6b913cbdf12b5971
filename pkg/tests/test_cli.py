import json
import subprocess
import sys

import numpy as np
import pytest

from posegan import io as pio
from posegan.cli import main
from posegan.training import METRIC_COLUMNS, TrainConfig

from conftest import TINY


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Synthetic data, a tiny config and one trained GAN shared by the tests below."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["make-synth", "--clips", "16", "--classes", "2", "--frames", "48", "--seed", "3",
                 "--out", str(d / "data.txt")]) == 0
    pio.save_config(TrainConfig(**TINY), d / "tiny.yaml")
    assert main(["train-gan", "--data", str(d / "data.txt"), "--config", str(d / "tiny.yaml"),
                 "--seed", "1", "--out", str(d / "run")]) == 0
    return d


def test_make_synth_output(workdir):
    ds = pio.load_dataset(workdir / "data.txt")
    assert len(ds) == 16 and {c.label for c in ds.clips} == {0, 1}
    assert all(len(c) == 48 for c in ds.clips)
    assert ds.classes == {0: "walk", 1: "wave"}


def test_train_gan_artifacts(workdir):
    run = workdir / "run"
    for name in ("config.yaml", "metrics.csv", "final.ckpt"):
        assert (run / name).exists()
    rows = pio.read_metrics_csv(run / "metrics.csv")
    assert len(rows) > 0 and set(rows[0]) == set(METRIC_COLUMNS)
    cfg, data = pio.load_config(run / "config.yaml")
    assert cfg.seed == 1 and data["train"].endswith("data.txt")
    assert pio.load_checkpoint(run / "final.ckpt").epoch == TINY["epochs"]


def test_train_gan_is_reproducible(workdir):
    assert main(["train-gan", "--data", str(workdir / "data.txt"), "--config", str(workdir / "tiny.yaml"),
                 "--seed", "1", "--out", str(workdir / "again")]) == 0
    assert (workdir / "again" / "metrics.csv").read_bytes() == (workdir / "run" / "metrics.csv").read_bytes()


def test_predict_ten_priors_twenty_poses_three_draws(workdir, capsys):
    out = workdir / "pred.txt"
    svg = workdir / "pred.svg"
    assert main(["predict", "--checkpoint", str(workdir / "run" / "final.ckpt"), "--data",
                 str(workdir / "data.txt"), "--clip", "0", "--priors", "10", "--horizon", "20",
                 "--samples", "3", "--svg", str(svg), "--out", str(out)]) == 0
    pred = pio.load_dataset(out)
    assert len(pred) == 3 and all(len(c) == 20 for c in pred.clips)
    assert pred.clip_ids == ["clip00000_z0", "clip00000_z1", "clip00000_z2"]
    assert not np.array_equal(pred.clips[0].frames, pred.clips[1].frames)
    text = svg.read_text()
    assert text.startswith("<svg") and text.count("<line") == 3 * (10 + 20) * 7
    assert "3 sequences of 20 poses" in capsys.readouterr().out


def test_predict_too_few_frames_is_an_error(workdir, capsys):
    code = main(["predict", "--checkpoint", str(workdir / "run" / "final.ckpt"), "--data",
                 str(workdir / "data.txt"), "--priors", "40", "--out", str(workdir / "x.txt")])
    assert code == 1 and "error:" in capsys.readouterr().err


def test_score_quality_prints_probabilities(workdir, capsys):
    assert main(["score-quality", "--checkpoint", str(workdir / "run" / "final.ckpt"), "--data",
                 str(workdir / "data.txt"), "--out", str(workdir / "q.csv")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 16
    probs = [float(line.split("\t")[1]) for line in lines]
    assert all(0 < p < 1 for p in probs)
    assert (workdir / "q.csv").read_text().splitlines()[0] == "clip,probability"


def test_train_classifier_writes_csvs(workdir):
    out = workdir / "cls"
    assert main(["train-classifier", "--data", str(workdir / "data.txt"), "--config", str(workdir / "tiny.yaml"),
                 "--checkpoint", str(workdir / "run" / "final.ckpt"), "--fraction", "0.5",
                 "--out", str(out)]) == 0
    header = (out / "accuracy.csv").read_text().splitlines()
    assert header[0] == "epoch,pretrained_train_acc,pretrained_test_acc,scratch_train_acc,scratch_test_acc"
    assert len(header) == 1 + TINY["cls_epochs"]
    cm = (out / "confusion_scratch.csv").read_text().splitlines()
    assert cm[0] == "true\\pred,0,1" and len(cm) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["fraction"] == 0.5 and "final_test_pretrained" in summary


def test_ablate_reports_both_arms(workdir):
    out = workdir / "abl.json"
    assert main(["ablate", "--data", str(workdir / "data.txt"), "--config", str(workdir / "tiny.yaml"),
                 "--toggle", "diversity", "--samples", "2", "--epochs", "1", "--out", str(out)]) == 0
    result = json.loads(out.read_text())
    assert result["toggle"] == "diversity" and result["ablated_config"]["weights"]["alpha_d"] == 0.0
    for arm in ("baseline", "ablated"):
        assert result[arm]["converged"] and result[arm]["diversity"] >= 0


def test_gradcheck_command_passes(capsys):
    assert main(["gradcheck", "--instances", "2", "--skip-networks"]) == 0
    assert "all suites passed" in capsys.readouterr().out


def test_unknown_flag_is_a_usage_error():
    proc = subprocess.run([sys.executable, "-m", "posegan.cli", "predict", "--bogus"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "usage:" in proc.stderr


def test_operation_error_exits_nonzero(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "posegan.cli", "score-quality", "--checkpoint",
                           str(tmp_path / "missing.ckpt"), "--data", str(tmp_path / "missing.txt")],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stderr.startswith("error:")


def test_bad_config_file_is_an_error(tmp_path, capsys):
    (tmp_path / "bad.yaml").write_text("train:\n  bogus: 1\n")
    assert main(["make-synth", "--clips", "4", "--out", str(tmp_path / "d.txt")]) == 0
    code = main(["train-gan", "--data", str(tmp_path / "d.txt"), "--config", str(tmp_path / "bad.yaml"),
                 "--out", str(tmp_path / "r")])
    assert code == 1 and "unknown" in capsys.readouterr().err
