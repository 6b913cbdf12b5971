"""Skeleton topology, pose sequences, normalization and synthetic motion."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class SkeletonSpec:
    joint_count: int
    bones: Tuple[Tuple[int, int], ...]
    name: str = "skeleton"
    joint_names: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "bones", tuple((int(a), int(b)) for a, b in self.bones))
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        self.validate()

    def validate(self) -> None:
        J = self.joint_count
        if J < 1:
            raise ValueError("joint_count must be positive")
        seen = set()
        for a, b in self.bones:
            if not (0 <= a < J and 0 <= b < J) or a == b:
                raise ValueError(f"bone ({a}, {b}) out of range for {J} joints")
            key = frozenset((a, b))
            if key in seen:
                raise ValueError(f"duplicate bone ({a}, {b})")
            seen.add(key)
        if self.joint_names and len(self.joint_names) != J:
            raise ValueError("joint_names length must equal joint_count")
        # a spanning tree has exactly J-1 edges and reaches every joint
        if len(self.bones) != J - 1:
            raise ValueError("bone graph must be a tree (joint_count - 1 bones)")
        adj = {j: [] for j in range(J)}
        for a, b in self.bones:
            adj[a].append(b)
            adj[b].append(a)
        stack, reached = [0], {0}
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in reached:
                    reached.add(nb)
                    stack.append(nb)
        if len(reached) != J:
            raise ValueError("bone graph must be connected")

    @property
    def parents(self) -> np.ndarray:
        return np.array([a for a, _ in self.bones], dtype=int)

    @property
    def children(self) -> np.ndarray:
        return np.array([b for _, b in self.bones], dtype=int)

    def to_dict(self) -> dict:
        return {"name": self.name, "joint_count": self.joint_count,
                "bones": [list(b) for b in self.bones], "joint_names": list(self.joint_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonSpec":
        return cls(int(d["joint_count"]), tuple(tuple(b) for b in d["bones"]),
                   d.get("name", "skeleton"), tuple(d.get("joint_names", ())))


# pelvis, chest, left elbow, left hand, right elbow, right hand, left foot, right foot
BODY8 = SkeletonSpec(
    8,
    ((0, 1), (1, 2), (2, 3), (1, 4), (4, 5), (0, 6), (0, 7)),
    name="body8",
    joint_names=("pelvis", "chest", "l_elbow", "l_hand", "r_elbow", "r_hand", "l_foot", "r_foot"),
)


@dataclass
class PoseSequence:
    frames: np.ndarray
    label: Optional[int] = None
    subject: Optional[str] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise ValueError(f"frames must be T x J x 3, got shape {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("a pose sequence needs at least one frame")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("pose coordinates must be finite")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def joint_count(self) -> int:
        return self.frames.shape[1]

    def check_skeleton(self, spec: SkeletonSpec) -> None:
        if self.joint_count != spec.joint_count:
            raise ValueError(f"sequence has {self.joint_count} joints, skeleton {spec.name} has {spec.joint_count}")

    def with_frames(self, frames: np.ndarray) -> "PoseSequence":
        return PoseSequence(frames, self.label, self.subject)


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if not np.all(self.std > 0):
            raise ValueError("degenerate coordinate: std must be positive")


@dataclass
class SequencePair:
    prior: PoseSequence
    future: PoseSequence
    offset: int = 0


def compute_stats(dataset: Sequence[PoseSequence]) -> NormalizationStats:
    """Per-coordinate mean and population std pooled over joints, frames and clips."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    coords = np.concatenate([np.asarray(s.frames if isinstance(s, PoseSequence) else s).reshape(-1, 3)
                             for s in dataset])
    n_frames = sum(len(s) for s in dataset)
    if n_frames < 2:
        raise ValueError("degenerate coordinate: at least two frames are needed")
    mean = coords.mean(axis=0)
    std = coords.std(axis=0)
    if np.any(std <= 0):
        raise ValueError(f"degenerate coordinate: zero variance in axis {int(np.argmin(std))}")
    return NormalizationStats(mean, std)


def normalize(seq, stats: NormalizationStats):
    if isinstance(seq, PoseSequence):
        return seq.with_frames(normalize(seq.frames, stats))
    return (np.asarray(seq, dtype=np.float64) - stats.mean) / (2.0 * stats.std)


def denormalize(seq, stats: NormalizationStats):
    if isinstance(seq, PoseSequence):
        return seq.with_frames(denormalize(seq.frames, stats))
    return np.asarray(seq, dtype=np.float64) * (2.0 * stats.std) + stats.mean


def split_segments(clip: PoseSequence, segment_len: int, frame_stride: int = 2,
                   hop: Optional[int] = None) -> List[PoseSequence]:
    """Cut a clip into subsampled windows of ``segment_len`` frames.

    Each window spans ``segment_len * frame_stride`` source frames and keeps
    every ``frame_stride``-th one.  Windows start every ``hop`` source frames
    (default: back to back).
    """
    if segment_len < 1 or frame_stride < 1:
        raise ValueError("segment_len and frame_stride must be positive")
    span = segment_len * frame_stride
    hop = span if hop is None else int(hop)
    if hop < 1:
        raise ValueError("hop must be positive")
    out = []
    start = 0
    while start + span <= len(clip):
        out.append(clip.with_frames(clip.frames[start:start + span:frame_stride]))
        start += hop
    return out


def sample_training_pair(segment: PoseSequence, m: int, n: int, rng: np.random.Generator) -> SequencePair:
    total = m + n
    if len(segment) < total:
        raise ValueError(f"segment of {len(segment)} frames is shorter than m+n={total}")
    offset = int(rng.integers(0, len(segment) - total + 1))
    window = segment.frames[offset:offset + total]
    return SequencePair(segment.with_frames(window[:m]), segment.with_frames(window[m:]), offset)


def center_of_mass(pose: np.ndarray) -> np.ndarray:
    """Unweighted mean over the joint axis (second to last)."""
    return np.asarray(pose, dtype=np.float64).mean(axis=-2)


def bone_lengths(pose: np.ndarray, spec: SkeletonSpec) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape[-2] != spec.joint_count:
        raise ValueError("pose does not match skeleton")
    diff = pose[..., spec.children, :] - pose[..., spec.parents, :]
    return np.linalg.norm(diff, axis=-1)


# ---------------------------------------------------------------------------
# synthetic motion

# rest offsets from parent, body frame (x left, y up, z forward), meters
_REST = {
    1: (0.0, 0.50, 0.0),
    2: (0.20, -0.22, 0.0),
    3: (0.0, -0.28, 0.0),
    4: (-0.20, -0.22, 0.0),
    5: (0.0, -0.28, 0.0),
    6: (0.11, -0.88, 0.0),
    7: (-0.11, -0.88, 0.0),
}

# angle channels driving the body8 rig
CHANNELS = ("torso_pitch", "torso_roll", "l_shoulder_pitch", "l_shoulder_roll", "l_elbow",
            "r_shoulder_pitch", "r_shoulder_roll", "r_elbow", "l_hip", "r_hip", "bob", "speed")


@dataclass(frozen=True)
class MotionClass:
    """Per-channel ``bias + amp * sin(2*pi*mult*f*t + phase)`` with base frequency ``freq``."""
    name: str
    freq: float
    channels: dict = field(default_factory=dict)


def _c(bias=0.0, amp=0.0, mult=1.0, phase=0.0):
    return (bias, amp, mult, phase)


MOTION_CLASSES: Tuple[MotionClass, ...] = (
    MotionClass("walk", 1 / 24, {"l_shoulder_pitch": _c(0, 0.5), "r_shoulder_pitch": _c(0, 0.5, 1, np.pi),
                                 "l_hip": _c(0, 0.45, 1, np.pi), "r_hip": _c(0, 0.45), "l_elbow": _c(0.3),
                                 "r_elbow": _c(0.3), "bob": _c(0, 0.02, 2), "speed": _c(0.012)}),
    MotionClass("wave", 1 / 16, {"r_shoulder_roll": _c(2.4, 0.15), "r_elbow": _c(0.6, 0.5, 1, 0.5),
                                 "l_elbow": _c(0.1)}),
    MotionClass("squat", 1 / 36, {"l_hip": _c(0.6, 0.6, 1, -np.pi / 2), "r_hip": _c(0.6, 0.6, 1, -np.pi / 2),
                                  "torso_pitch": _c(0.25, 0.25, 1, -np.pi / 2),
                                  "bob": _c(-0.12, 0.12, 1, np.pi / 2),
                                  "l_shoulder_pitch": _c(0.6, 0.6, 1, -np.pi / 2),
                                  "r_shoulder_pitch": _c(0.6, 0.6, 1, -np.pi / 2)}),
    MotionClass("clap", 1 / 12, {"l_shoulder_pitch": _c(1.3), "r_shoulder_pitch": _c(1.3),
                                 "l_shoulder_roll": _c(-0.45, 0.35), "r_shoulder_roll": _c(-0.45, 0.35),
                                 "l_elbow": _c(0.4), "r_elbow": _c(0.4)}),
    MotionClass("punch", 1 / 20, {"l_shoulder_pitch": _c(1.2, 0.35, 1, np.pi), "r_shoulder_pitch": _c(1.2, 0.35),
                                  "l_elbow": _c(1.0, 0.9, 1, 0.0), "r_elbow": _c(1.0, 0.9, 1, np.pi),
                                  "torso_roll": _c(0, 0.12)}),
    MotionClass("jump", 1 / 20, {"bob": _c(0.08, 0.1), "l_shoulder_roll": _c(0.6, 0.6),
                                 "r_shoulder_roll": _c(0.6, 0.6), "l_hip": _c(0.15, 0.15, 1, np.pi),
                                 "r_hip": _c(0.15, 0.15, 1, np.pi)}),
    MotionClass("kick", 1 / 22, {"r_hip": _c(0.5, 0.7), "torso_pitch": _c(-0.1, 0.1, 1, np.pi),
                                 "l_shoulder_roll": _c(0.3), "r_shoulder_roll": _c(0.3)}),
    MotionClass("bow", 1 / 40, {"torso_pitch": _c(0.45, 0.45, 1, -np.pi / 2), "l_elbow": _c(0.2),
                                "r_elbow": _c(0.2), "l_shoulder_pitch": _c(0.1, 0.1), "r_shoulder_pitch": _c(0.1, 0.1)}),
)


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0] = 1
    R[..., 1, 1], R[..., 1, 2] = c, -s
    R[..., 2, 1], R[..., 2, 2] = s, c
    return R


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 1, 1] = 1
    R[..., 0, 0], R[..., 0, 2] = c, s
    R[..., 2, 0], R[..., 2, 2] = -s, c
    return R


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 2, 2] = 1
    R[..., 0, 0], R[..., 0, 1] = c, -s
    R[..., 1, 0], R[..., 1, 1] = s, c
    return R


def synth_motion(class_id: int, T: int, spec: SkeletonSpec = BODY8,
                 rng: Optional[np.random.Generator] = None, jitter: float = 0.15,
                 subject: Optional[str] = None) -> PoseSequence:
    """Articulated periodic motion for one of ``MOTION_CLASSES``.

    Joint angles are smooth functions of time pushed through forward
    kinematics, so bone lengths stay fixed exactly.  ``jitter`` scales the
    per-clip random variation (amplitude, tempo, phase, facing, body size).
    """
    if spec.joint_count != BODY8.joint_count or spec.bones != BODY8.bones:
        raise ValueError("synthetic motion is only defined for the body8 skeleton")
    if not 0 <= class_id < len(MOTION_CLASSES):
        raise ValueError(f"unknown class {class_id}")
    if T < 1:
        raise ValueError("T must be positive")
    rng = np.random.default_rng() if rng is None else rng
    mc = MOTION_CLASSES[class_id]

    t = np.arange(T, dtype=np.float64)
    freq = mc.freq * (1 + jitter * rng.uniform(-1, 1))
    t0 = rng.uniform(0, 1 / freq)
    scale = 1 + 0.5 * jitter * rng.uniform(-1, 1)
    ang = {}
    for ch in CHANNELS:
        bias, amp, mult, phase = mc.channels.get(ch, _c())
        amp = amp * (1 + jitter * rng.uniform(-1, 1))
        ang[ch] = bias + amp * np.sin(2 * np.pi * mult * freq * (t + t0) + phase)
        # small smooth idle sway so no two clips share a channel exactly
        ang[ch] = ang[ch] + 0.3 * jitter * rng.uniform(-0.2, 0.2) * np.sin(
            2 * np.pi * rng.uniform(0.01, 0.04) * t + rng.uniform(0, 2 * np.pi))

    yaw = rng.uniform(-np.pi, np.pi)
    R_root = _rot_y(np.full(T, yaw))
    R_chest = R_root @ _rot_x(ang["torso_pitch"]) @ _rot_z(ang["torso_roll"])
    R_lsh = R_chest @ _rot_x(-ang["l_shoulder_pitch"]) @ _rot_z(ang["l_shoulder_roll"])
    R_rsh = R_chest @ _rot_x(-ang["r_shoulder_pitch"]) @ _rot_z(-ang["r_shoulder_roll"])
    R_lel = R_lsh @ _rot_x(-ang["l_elbow"])
    R_rel = R_rsh @ _rot_x(-ang["r_elbow"])
    R_lhip = R_root @ _rot_x(-ang["l_hip"])
    R_rhip = R_root @ _rot_x(-ang["r_hip"])

    heading = _rot_y(np.array(yaw)) @ np.array([0.0, 0.0, 1.0])
    speed = ang["speed"]
    root = np.zeros((T, 3))
    root[:, 1] = 0.9 * scale + ang["bob"]
    root += np.cumsum(speed)[:, None] * heading[None, :]
    root[:, [0, 2]] += rng.uniform(-0.5, 0.5, size=2)

    def off(j):
        return np.asarray(_REST[j]) * scale

    P = np.zeros((T, 8, 3))
    P[:, 0] = root
    P[:, 1] = root + R_chest @ off(1)
    P[:, 2] = P[:, 1] + R_lsh @ off(2)
    P[:, 3] = P[:, 2] + R_lel @ off(3)
    P[:, 4] = P[:, 1] + R_rsh @ off(4)
    P[:, 5] = P[:, 4] + R_rel @ off(5)
    P[:, 6] = root + R_lhip @ off(6)
    P[:, 7] = root + R_rhip @ off(7)
    return PoseSequence(P, label=class_id, subject=subject)


def make_synthetic_dataset(n_clips: int, n_classes: int = 2, T: int = 80, seed: int = 0,
                           spec: SkeletonSpec = BODY8, jitter: float = 0.15) -> List[PoseSequence]:
    """Balanced labeled dataset; clip ``i`` has class ``i % n_classes``."""
    if not 1 <= n_classes <= len(MOTION_CLASSES):
        raise ValueError(f"n_classes must be in [1, {len(MOTION_CLASSES)}]")
    rng = np.random.default_rng(seed)
    return [synth_motion(i % n_classes, T, spec, rng, jitter, subject=f"s{i % 7}") for i in range(n_clips)]
