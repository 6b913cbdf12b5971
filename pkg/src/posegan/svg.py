"""Static SVG stick figures: one row per latent draw, one figure per frame."""
from __future__ import annotations

from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .io import atomic_write
from .skeleton import SkeletonSpec


def render_strips(sequences: np.ndarray, spec: SkeletonSpec, prior: Optional[np.ndarray] = None,
                  every: int = 1, cell: int = 60, labels: Optional[Sequence[str]] = None,
                  axes=(0, 1)) -> str:
    """Render ``sequences`` (S, T, J, 3) as S horizontal strips of stick figures.

    ``prior`` (m, J, 3), if given, is drawn in grey at the start of every
    strip.  Coordinates are projected on ``axes`` (x right, y up by default)
    and scaled with one shared factor so figures are comparable.
    """
    seqs = np.asarray(sequences, dtype=float)
    if seqs.ndim == 3:
        seqs = seqs[None]
    if seqs.ndim != 4 or seqs.shape[-1] != 3 or seqs.shape[2] != spec.joint_count:
        raise ValueError(f"expected (S, T, {spec.joint_count}, 3) poses, got {seqs.shape}")
    if every < 1:
        raise ValueError("every must be positive")
    pri = np.zeros((0,) + seqs.shape[2:]) if prior is None else np.asarray(prior, dtype=float)[::every]
    frames = [np.concatenate([pri, s[::every]]) for s in seqs]
    n_prior = len(pri)
    ax, ay = axes
    pts = np.concatenate(frames)[..., [ax, ay]]
    span = float(np.max(pts.max(axis=(0, 1)) - pts.min(axis=(0, 1)))) or 1.0
    scale = 0.8 * cell / span
    label_w = 40 if labels is not None else 0
    width = label_w + cell * max(len(f) for f in frames)
    height = cell * len(frames)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">', f'<rect width="{width}" height="{height}" fill="white"/>']
    for row, seq in enumerate(frames):
        if labels is not None:
            out.append(f'<text x="4" y="{row * cell + cell // 2}" font-size="10" font-family="sans-serif">'
                       f'{escape(str(labels[row]))}</text>')
        for col, pose in enumerate(seq):
            p2 = pose[:, [ax, ay]]
            center = p2.mean(axis=0)
            cx, cy = label_w + col * cell + cell / 2, row * cell + cell / 2
            xy = np.column_stack([cx + (p2[:, 0] - center[0]) * scale, cy - (p2[:, 1] - center[1]) * scale])
            color = "#999999" if col < n_prior else "#1f4e9c"
            for a, b in spec.bones:
                out.append(f'<line x1="{xy[a, 0]:.2f}" y1="{xy[a, 1]:.2f}" x2="{xy[b, 0]:.2f}" '
                           f'y2="{xy[b, 1]:.2f}" stroke="{color}" stroke-width="1.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_strips(path, sequences, spec: SkeletonSpec, **kw) -> None:
    atomic_write(path, render_strips(sequences, spec, **kw).encode("utf-8"))
