"""Input validation helpers shared by the estimators and the command line."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.exceptions import NotFittedError

from .skeleton import PoseSequence, SkeletonSpec


def check_pose_array(X, n_joints: Optional[int] = None, min_frames: int = 1, name: str = "X") -> np.ndarray:
    """Return ``X`` as a float array of shape (N, T, J, 3).

    A single sequence (T, J, 3) gains a leading axis.  Non-finite values,
    the wrong trailing axis and a joint count different from ``n_joints``
    are rejected.
    """
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"{name} must have shape (N, T, J, 3) or (T, J, 3); got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if arr.shape[1] < min_frames:
        raise ValueError(f"{name} needs at least {min_frames} frames, got {arr.shape[1]}")
    if n_joints is not None and arr.shape[2] != n_joints:
        raise ValueError(f"{name} has {arr.shape[2]} joints, skeleton has {n_joints}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr


def check_sequences(X, spec: Optional[SkeletonSpec] = None, y=None, min_frames: int = 2) -> list:
    """Coerce clips into a list of :class:`PoseSequence`.

    Accepts a list of ``PoseSequence`` objects, a list of (T, J, 3) arrays
    (lengths may differ) or one (N, T, J, 3) array.  ``y`` overrides or
    supplies labels.
    """
    if isinstance(X, PoseSequence):
        X = [X]
    if isinstance(X, np.ndarray) and X.ndim == 4:
        X = list(X)
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise ValueError("expected a non-empty sequence of clips")
    labels = None if y is None else check_labels(y, n_samples=len(X))
    out = []
    for i, clip in enumerate(X):
        if isinstance(clip, PoseSequence):
            seq = clip
        else:
            frames = check_pose_array(clip, min_frames=1, name=f"clip {i}")[0]
            seq = PoseSequence(frames)
        if len(seq) < min_frames:
            raise ValueError(f"clip {i} has {len(seq)} frames; at least {min_frames} required")
        if spec is not None:
            seq.check_skeleton(spec)
        if labels is not None:
            seq = PoseSequence(seq.frames, int(labels[i]), seq.subject)
        out.append(seq)
    return out


def check_labels(y, n_samples: Optional[int] = None, n_classes: Optional[int] = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be one-dimensional, got shape {y.shape}")
    if n_samples is not None and len(y) != n_samples:
        raise ValueError(f"{len(y)} labels for {n_samples} samples")
    if not np.issubdtype(y.dtype, np.integer):
        if np.issubdtype(y.dtype, np.floating) and np.all(np.mod(y, 1) == 0):
            y = y.astype(int)
        else:
            raise ValueError("labels must be integers")
    if np.any(y < 0):
        raise ValueError("labels must be non-negative")
    if n_classes is not None and np.any(y >= n_classes):
        raise ValueError(f"label out of range for {n_classes} classes")
    return y.astype(int)


def check_labeled(clips: Sequence[PoseSequence]) -> np.ndarray:
    labels = [c.label for c in clips]
    if any(lab is None for lab in labels):
        raise ValueError("every clip needs a label")
    return np.asarray(labels, dtype=int)


def check_is_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")


def check_fraction(value: float, name: str = "fraction", allow_one: bool = True) -> float:
    value = float(value)
    upper_ok = value <= 1 if allow_one else value < 1
    if not (value > 0 and upper_ok):
        raise ValueError(f"{name} must be in (0, 1{']' if allow_one else ')'}, got {value}")
    return value
