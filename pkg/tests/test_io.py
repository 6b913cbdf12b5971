import struct

import numpy as np
import pytest
import torch
import yaml
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from posegan.io import (CHECKPOINT_MAGIC, Dataset, FormatError, config_from_document, dumps_checkpoint,
                        dumps_config, dumps_dataset, load_checkpoint, load_config, load_dataset,
                        loads_checkpoint, loads_dataset, read_metrics_csv, save_checkpoint, save_config,
                        save_dataset, write_metrics_csv)
from posegan.skeleton import BODY8, PoseSequence, make_synthetic_dataset
from posegan.training import METRIC_COLUMNS, TrainConfig


def _dataset(n=2, T=5, seed=0):
    clips = make_synthetic_dataset(n, 2, T=T, seed=seed)
    return Dataset(clips, BODY8, {0: "walk", 1: "wave"}, [f"c{i}" for i in range(n)])


# -- dataset files ------------------------------------------------------------------

def test_dataset_round_trip_two_clips(tmp_path):
    ds = _dataset(2, T=5)
    save_dataset(ds, tmp_path / "d.txt")
    back = load_dataset(tmp_path / "d.txt")
    assert len(back) == 2 and [len(c) for c in back.clips] == [5, 5]
    assert back.clip_ids == ["c0", "c1"] and back.classes == ds.classes
    assert back.skeleton.bones == BODY8.bones and back.skeleton.joint_names == BODY8.joint_names
    assert [c.label for c in back.clips] == [0, 1]
    assert [c.subject for c in back.clips] == [c.subject for c in ds.clips]
    assert back.summary()["per_class"] == {0: 1, 1: 1}


def test_dataset_round_trip_nine_digits():
    ds = _dataset(3, T=7)
    back = loads_dataset(dumps_dataset(ds))
    for a, b in zip(ds.clips, back.clips):
        np.testing.assert_allclose(b.frames, a.frames, rtol=1e-8, atol=1e-12)
    # rewriting the parsed file reproduces the text exactly
    assert dumps_dataset(back) == dumps_dataset(ds)


@given(arrays(np.float64, (3, 8, 3), elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_dataset_exact_precision_is_lossless(frames):
    ds = Dataset([PoseSequence(frames, None, None)], BODY8)
    back = loads_dataset(dumps_dataset(ds, precision=None))
    assert np.array_equal(back.clips[0].frames, frames)
    assert back.clips[0].label is None and back.clips[0].subject is None


def _text(ds=None):
    return dumps_dataset(ds or _dataset(2, T=3))


def test_empty_dataset_rejected():
    ds = Dataset([], BODY8, {0: "walk"})
    with pytest.raises(FormatError, match="empty dataset"):
        loads_dataset(dumps_dataset(ds))


def test_joint_count_mismatch_names_record():
    lines = _text().splitlines()
    # drop one coordinate triple from the first frame of the second record
    idx = [i for i, line in enumerate(lines) if line.startswith("clip ")][1] + 1
    lines[idx] = " ".join(lines[idx].split()[:-3])
    with pytest.raises(FormatError, match="record 1"):
        loads_dataset("\n".join(lines))


def test_nan_coordinate_rejected():
    lines = _text().splitlines()
    idx = [i for i, line in enumerate(lines) if line.startswith("clip ")][0] + 2
    vals = lines[idx].split()
    vals[4] = "nan"
    lines[idx] = " ".join(vals)
    with pytest.raises(FormatError, match="record 0.*non-finite"):
        loads_dataset("\n".join(lines))


@pytest.mark.parametrize("mutate, msg", [
    (lambda t: t.replace("POSEDATA 1", "POSEDATA 2"), "version"),
    (lambda t: t.replace("POSEDATA 1", "HELLO"), "not a POSEDATA"),
    (lambda t: t.replace("label 1", "label 7"), "not in class table"),
    (lambda t: t.replace("records 2", "records 3"), "end of file"),
    (lambda t: t + "junk\n", "trailing"),
    (lambda t: t.replace("units m", "flavour m"), "unknown header key"),
])
def test_malformed_dataset_files(mutate, msg):
    with pytest.raises(FormatError, match=msg):
        loads_dataset(mutate(_text()))


# -- checkpoints --------------------------------------------------------------------

def test_checkpoint_round_trip_forward_bit_identical(tiny_run, tmp_path):
    clips, run = tiny_run
    ckpt = run.final
    save_checkpoint(ckpt, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.epoch == ckpt.epoch and back.k_best == ckpt.k_best
    assert back.config == ckpt.config and back.history == ckpt.history
    G0, D0, Q0 = ckpt.models()
    G1, D1, Q1 = back.models()
    gen = torch.Generator().manual_seed(0)
    prior = torch.randn(3, 4, 8, 3, generator=gen, dtype=torch.float64)
    z = torch.rand(3, 4, generator=gen, dtype=torch.float64)
    seq = torch.randn(3, 10, 8, 3, generator=gen, dtype=torch.float64)
    with torch.no_grad():
        assert torch.equal(G0(prior, z, 6), G1(prior, z, 6))
        assert torch.equal(D0.logit(seq), D1.logit(seq))
        assert torch.equal(Q0(seq), Q1(seq))
    for key, value in ckpt.optimizers["d"]["state"].items():
        assert torch.equal(value["exp_avg"], back.optimizers["d"]["state"][key]["exp_avg"])


def test_checkpoint_records_k_best(tiny_run):
    _, run = tiny_run
    meta = loads_checkpoint(dumps_checkpoint(run.final))
    assert isinstance(meta.k_best, int) and meta.k_best == run.trainer.k_best


def test_checkpoint_tampered_length_rejected(tiny_run):
    data = bytearray(dumps_checkpoint(tiny_run[1].final))
    # first section: magic(4) version(4) count(4) namelen(4) "meta"(4) payload length(8)
    (plen,) = struct.unpack_from("<Q", data, 20)
    struct.pack_into("<Q", data, 20, plen + 5)
    with pytest.raises(FormatError):
        loads_checkpoint(bytes(data))


@pytest.mark.parametrize("cut", [3, 20, 100, -1])
def test_checkpoint_truncated_rejected(tiny_run, cut):
    data = dumps_checkpoint(tiny_run[1].final)
    with pytest.raises(FormatError):
        loads_checkpoint(data[:cut])


def test_checkpoint_version_and_checksum(tiny_run):
    data = bytearray(dumps_checkpoint(tiny_run[1].final))
    bad_version = bytearray(data)
    struct.pack_into("<I", bad_version, 4, 99)
    with pytest.raises(FormatError, match="version 99"):
        loads_checkpoint(bytes(bad_version))
    flipped = bytearray(data)
    flipped[len(flipped) // 2] ^= 0xFF
    with pytest.raises(FormatError, match="checksum"):
        loads_checkpoint(bytes(flipped))
    assert bytes(data[:4]) == CHECKPOINT_MAGIC


# -- run configuration --------------------------------------------------------------

def test_config_file_round_trip(tmp_path):
    cfg = TrainConfig(seed=4, epochs=7).replace(alpha_d=2.5)
    save_config(cfg, tmp_path / "c.yaml", data={"train": "x.txt"})
    back, data = load_config(tmp_path / "c.yaml")
    assert back == cfg and data == {"train": "x.txt"}


def test_config_provenance_marks_non_paper_defaults():
    doc = yaml.safe_load(dumps_config(TrainConfig()))
    prov = doc["provenance"]
    assert prov["train.lr"] == "paper" and prov["weights.lambda_gp"] == "paper"
    assert prov["weights.alpha_d"] == "non-paper default"
    assert prov["train.disc_width"] == "non-paper default"
    expected = {f"train.{k}" for k in doc["train"]} | {f"weights.{k}" for k in doc["weights"]} \
        | {f"latent.{k}" for k in doc["latent"]}
    assert set(prov) == expected
    changed = yaml.safe_load(dumps_config(TrainConfig(lr=1e-3).replace(alpha_d=2.0)))["provenance"]
    assert changed["train.lr"] == "override" and changed["weights.alpha_d"] == "override"
    assert changed["train.m"] == "paper"


@pytest.mark.parametrize("doc", [
    {"train": {"bogus": 1}},
    {"weights": {"alpha_x": 1}},
    {"latent": {"dims": 3}},
    {"data": {"extra": "a"}},
    {"other": {}},
    {"train": {"weights": {}}},
    [1, 2],
])
def test_config_unknown_keys_rejected(doc):
    with pytest.raises(ValueError):
        config_from_document(doc)


def test_empty_config_document_gives_defaults():
    cfg, data = config_from_document(None)
    assert cfg == TrainConfig() and data == {}


# -- metric CSV ---------------------------------------------------------------------

def test_metrics_csv_column_order(tiny_run, tmp_path):
    history = tiny_run[1].history
    write_metrics_csv(tmp_path / "m.csv", history)
    header = (tmp_path / "m.csv").read_text().splitlines()[0].split(",")
    assert tuple(header) == METRIC_COLUMNS
    assert header[:9] == ["step", "epoch", "loss_d", "loss_g", "loss_q", "loss_pg", "loss_div",
                          "loss_energy", "loss_bone"]
    rows = read_metrics_csv(tmp_path / "m.csv")
    assert len(rows) == len(history)
    assert [r["step"] for r in rows] == [h["step"] for h in history]
    assert rows[0]["loss_d"] == history[0]["loss_d"]


def test_metrics_csv_wrong_columns(tmp_path):
    (tmp_path / "m.csv").write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        read_metrics_csv(tmp_path / "m.csv")
