"""Converter stub: per-frame joint CSV files -> POSEDATA dataset file.

An example only; it is not a maintained parser.  The input layout assumed
here is one CSV per clip named ``<subject>_<label>_<anything>.csv``, one row
per frame, columns ``x0,y0,z0,x1,...`` in millimeters.  Adapt ``read_clip``
and ``JOINT_MAP`` to the source format and keep the rest.

    python skeleton_csv_stub.py --src raw/ --classes walk,wave --out data.txt
"""
import argparse
from pathlib import Path

import numpy as np

from posegan.io import Dataset, save_dataset
from posegan.skeleton import BODY8, PoseSequence

# source joint index for each body8 joint (pelvis chest l_elbow l_hand r_elbow r_hand l_foot r_foot)
JOINT_MAP = [0, 1, 2, 3, 4, 5, 6, 7]
SOURCE_UNITS_PER_METER = 1000.0


def read_clip(path: Path) -> np.ndarray:
    raw = np.loadtxt(path, delimiter=",", ndmin=2)
    if raw.shape[1] % 3:
        raise ValueError(f"{path}: column count {raw.shape[1]} is not a multiple of 3")
    joints = raw.reshape(len(raw), -1, 3)
    return joints[:, JOINT_MAP] / SOURCE_UNITS_PER_METER


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--src", required=True)
    parser.add_argument("--classes", required=True, help="comma-separated class names, in label order")
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    names = args.classes.split(",")
    clips, ids = [], []
    for path in sorted(Path(args.src).glob("*.csv")):
        subject, label = path.stem.split("_")[:2]
        clips.append(PoseSequence(read_clip(path), names.index(label), subject))
        ids.append(path.stem)
    save_dataset(Dataset(clips, BODY8, dict(enumerate(names)), ids), args.out)
    print(f"wrote {len(clips)} clips to {args.out}")


if __name__ == "__main__":
    main()
