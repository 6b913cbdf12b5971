"""File formats: pose datasets, checkpoints, run configuration and metric CSVs.

Dataset file (text, UTF-8, one item per line)::

    POSEDATA 1
    skeleton <name> <joint_count>
    joints <name> <name> ...            (optional)
    bones <parent>-<child> ...
    units m
    classes <count>
    class <id> <name>                   (one line per class)
    records <count>
    end_header
    clip <id> subject <subject|-> label <label|-> frames <T>
    <x y z for joint 0> <x y z for joint 1> ...   (T lines)
    ...

Coordinates are written with ``precision`` significant digits (9 by
default; ``None`` writes the shortest exact representation).

Checkpoint file (binary, little endian)::

    magic b"PGCK" | u32 version | u32 section count
    per section: u32 name length | name (utf-8) | u64 payload length | payload
    u32 crc32 of everything before it

Sections: ``meta`` (JSON) and one ``torch.save`` payload per state dict.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import yaml

from .losses import LossWeights
from .networks import LatentSpec
from .skeleton import PoseSequence, SkeletonSpec
from .training import METRIC_COLUMNS, Checkpoint, TrainConfig

DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"PGCK"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# dataset files

@dataclass
class Dataset:
    clips: List[PoseSequence]
    skeleton: SkeletonSpec
    classes: Dict[int, str] = field(default_factory=dict)
    clip_ids: List[str] = field(default_factory=list)
    units: str = "m"

    def __len__(self):
        return len(self.clips)

    def summary(self) -> dict:
        counts: Dict[int, int] = {}
        for c in self.clips:
            if c.label is not None:
                counts[c.label] = counts.get(c.label, 0) + 1
        return {"clips": len(self.clips), "classes": len(self.classes), "per_class": counts,
                "frames": [len(c) for c in self.clips]}


def _fmt(v: float, precision: Optional[int]) -> str:
    return repr(float(v)) if precision is None else f"{v:.{precision}g}"


def dumps_dataset(ds: Dataset, precision: Optional[int] = 9) -> str:
    spec = ds.skeleton
    lines = [f"POSEDATA {DATASET_VERSION}", f"skeleton {spec.name} {spec.joint_count}"]
    if spec.joint_names:
        lines.append("joints " + " ".join(spec.joint_names))
    lines.append("bones " + " ".join(f"{a}-{b}" for a, b in spec.bones))
    lines.append(f"units {ds.units}")
    lines.append(f"classes {len(ds.classes)}")
    for cid in sorted(ds.classes):
        lines.append(f"class {cid} {ds.classes[cid]}")
    lines.append(f"records {len(ds.clips)}")
    lines.append("end_header")
    ids = ds.clip_ids or [f"clip{i:05d}" for i in range(len(ds.clips))]
    for cid, clip in zip(ids, ds.clips):
        subj = clip.subject if clip.subject is not None else "-"
        label = clip.label if clip.label is not None else "-"
        lines.append(f"clip {cid} subject {subj} label {label} frames {len(clip)}")
        for frame in clip.frames:
            lines.append(" ".join(_fmt(v, precision) for v in frame.reshape(-1)))
    return "\n".join(lines) + "\n"


def save_dataset(ds: Dataset, path, precision: Optional[int] = 9) -> None:
    atomic_write(path, dumps_dataset(ds, precision).encode("utf-8"))


def loads_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    pos = 0

    def next_line(what: str) -> List[str]:
        nonlocal pos
        if pos >= len(lines):
            raise FormatError(f"unexpected end of file while reading {what}")
        parts = lines[pos].split()
        pos += 1
        return parts

    head = next_line("magic")
    if len(head) != 2 or head[0] != "POSEDATA":
        raise FormatError("not a POSEDATA file")
    if head[1] != str(DATASET_VERSION):
        raise FormatError(f"unsupported dataset version {head[1]}")
    name, joint_count, joint_names, bones, units = "skeleton", None, (), None, "m"
    classes: Dict[int, str] = {}
    n_records = None
    while True:
        parts = next_line("header")
        if not parts:
            continue
        key = parts[0]
        if key == "end_header":
            break
        if key == "skeleton":
            name, joint_count = parts[1], int(parts[2])
        elif key == "joints":
            joint_names = tuple(parts[1:])
        elif key == "bones":
            bones = tuple(tuple(int(v) for v in b.split("-")) for b in parts[1:])
        elif key == "units":
            units = parts[1]
        elif key == "classes":
            pass
        elif key == "class":
            classes[int(parts[1])] = " ".join(parts[2:])
        elif key == "records":
            n_records = int(parts[1])
        else:
            raise FormatError(f"unknown header key {key!r}")
    if joint_count is None or bones is None or n_records is None:
        raise FormatError("header is missing skeleton, bones or records")
    spec = SkeletonSpec(joint_count, bones, name, joint_names)
    if n_records == 0:
        raise FormatError("empty dataset")
    clips, ids = [], []
    for r in range(n_records):
        try:
            parts = next_line(f"record {r}")
            if len(parts) != 8 or parts[0] != "clip" or parts[2] != "subject" or parts[4] != "label" \
                    or parts[6] != "frames":
                raise FormatError("malformed record header")
            cid, subj, label, T = parts[1], parts[3], parts[5], int(parts[7])
            label = None if label == "-" else int(label)
            if label is not None and classes and label not in classes:
                raise FormatError(f"label {label} not in class table")
            rows = []
            for _ in range(T):
                vals = next_line(f"record {r}")
                if len(vals) != 3 * joint_count:
                    raise FormatError(f"expected {3 * joint_count} values per frame, got {len(vals)}")
                rows.append([float(v) for v in vals])
            frames = np.asarray(rows, dtype=np.float64).reshape(T, joint_count, 3)
            if not np.all(np.isfinite(frames)):
                raise FormatError("non-finite coordinate")
            clips.append(PoseSequence(frames, label, None if subj == "-" else subj))
            ids.append(cid)
        except (FormatError, ValueError) as exc:
            raise FormatError(f"record {r}: {exc}") from None
    if pos < len(lines) and any(l.strip() for l in lines[pos:]):
        raise FormatError("trailing data after last record")
    return Dataset(clips, spec, classes, ids, units)


def load_dataset(path) -> Dataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# checkpoints

def _torch_bytes(obj) -> bytes:
    buf = io.BytesIO()
    torch.save(obj, buf)
    return buf.getvalue()


def dumps_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = {"epoch": ckpt.epoch, "k_best": ckpt.k_best, "history": ckpt.history, "config": ckpt.config,
            "skeleton": ckpt.skeleton, "stats": ckpt.stats}
    sections = [("meta", json.dumps(meta).encode("utf-8")),
                ("generator", _torch_bytes(ckpt.generator)),
                ("discriminator", _torch_bytes(ckpt.discriminator)),
                ("quality", _torch_bytes(ckpt.quality)),
                ("optimizers", _torch_bytes(ckpt.optimizers))]
    out = bytearray(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(sections)))
    for name, payload in sections:
        nb = name.encode("utf-8")
        out += struct.pack("<I", len(nb)) + nb + struct.pack("<Q", len(payload)) + payload
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def loads_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
    pos = 12
    sections = {}
    for _ in range(count):
        if pos + 4 > len(data):
            raise FormatError("truncated checkpoint")
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + nlen + 8 > len(data):
            raise FormatError("truncated checkpoint")
        name = data[pos:pos + nlen].decode("utf-8", errors="replace")
        pos += nlen
        (plen,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        if pos + plen + 4 > len(data):
            raise FormatError(f"truncated checkpoint in section {name!r}")
        sections[name] = data[pos:pos + plen]
        pos += plen
    if pos + 4 != len(data):
        raise FormatError("checkpoint length mismatch")
    (crc,) = struct.unpack_from("<I", data, pos)
    if crc != zlib.crc32(data[:pos]):
        raise FormatError("checkpoint checksum mismatch")
    missing = {"meta", "generator", "discriminator", "quality", "optimizers"} - set(sections)
    if missing:
        raise FormatError(f"checkpoint is missing sections {sorted(missing)}")
    meta = json.loads(sections["meta"].decode("utf-8"))

    def state(name):
        return torch.load(io.BytesIO(sections[name]), weights_only=True)

    return Checkpoint(state("generator"), state("discriminator"), state("quality"), state("optimizers"),
                      meta["epoch"], meta["k_best"], meta["history"], meta["config"], meta["skeleton"],
                      meta["stats"])


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write(path, dumps_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return loads_checkpoint(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# run configuration

CONFIG_SECTIONS = ("train", "weights", "latent", "data")
DATA_KEYS = ("train", "validation", "test")


def _provenance(cfg: TrainConfig) -> dict:
    """Where each value comes from: ``paper``, ``non-paper default`` or ``override``.

    A value counts as paper or default only while it still equals the
    default; anything else is an override of this run.
    """
    current, default = cfg.to_dict(), TrainConfig().to_dict()
    paper = {f"train.{k}" for k in TrainConfig.PAPER_DEFAULTS} | {f"weights.{k}" for k in LossWeights.PAPER_VALUES} \
        | {"latent.dim"}
    prov = {}
    for section in ("train", "weights", "latent"):
        cur = current if section == "train" else current[section]
        ref = default if section == "train" else default[section]
        for k, v in cur.items():
            if section == "train" and k in ("weights", "latent"):
                continue
            key = f"{section}.{k}"
            if v != ref[k]:
                prov[key] = "override"
            else:
                prov[key] = "paper" if key in paper else "non-paper default"
    return prov


def config_to_document(cfg: TrainConfig, data: Optional[dict] = None) -> dict:
    d = cfg.to_dict()
    weights, latent = d.pop("weights"), d.pop("latent")
    return {"train": d, "weights": weights, "latent": latent, "data": dict(data or {}),
            "provenance": _provenance(cfg)}


def dumps_config(cfg: TrainConfig, data: Optional[dict] = None) -> str:
    return yaml.safe_dump(config_to_document(cfg, data), sort_keys=False)


def config_from_document(doc: dict) -> Tuple[TrainConfig, dict]:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ValueError("config document must be a mapping")
    unknown = set(doc) - set(CONFIG_SECTIONS) - {"provenance"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    train = dict(doc.get("train") or {})
    if "weights" in train or "latent" in train:
        raise ValueError("weights and latent belong in their own sections")
    weights = dict(doc.get("weights") or {})
    bad = set(weights) - set(LossWeights.field_names())
    if bad:
        raise ValueError(f"unknown weights keys: {sorted(bad)}")
    latent = dict(doc.get("latent") or {})
    bad = set(latent) - set(LatentSpec().to_dict())
    if bad:
        raise ValueError(f"unknown latent keys: {sorted(bad)}")
    data = dict(doc.get("data") or {})
    bad = set(data) - set(DATA_KEYS)
    if bad:
        raise ValueError(f"unknown data keys: {sorted(bad)}")
    train["weights"] = weights
    train["latent"] = latent
    return TrainConfig.from_dict(train), data


def load_config(path) -> Tuple[TrainConfig, dict]:
    return config_from_document(yaml.safe_load(Path(path).read_text(encoding="utf-8")))


def save_config(cfg: TrainConfig, path, data: Optional[dict] = None) -> None:
    atomic_write(path, dumps_config(cfg, data).encode("utf-8"))


# ---------------------------------------------------------------------------
# CSV

def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    atomic_write(path, buf.getvalue().encode("utf-8"))


def write_metrics_csv(path, history: Sequence[dict]) -> None:
    write_csv(path, METRIC_COLUMNS, ([row[c] for c in METRIC_COLUMNS] for row in history))


def read_metrics_csv(path) -> List[dict]:
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        if tuple(r.fieldnames or ()) != METRIC_COLUMNS:
            raise FormatError("unexpected metric columns")
        return [{k: (int(v) if k in ("step", "epoch") else float(v)) for k, v in row.items()} for row in r]
