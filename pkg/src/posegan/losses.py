"""Training objectives for the discriminator, generator, quality and classifier networks.

All adversarial objectives are written as quantities to minimize.  Pose
tensors are ``(B, T, J, 3)``; a missing batch axis is added.  Batched
losses are averaged over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict, fields
from typing import Callable, Mapping, Optional

import numpy as np
import torch

from .autodiff import grad_norm
from .skeleton import SkeletonSpec

LOG_CLAMP = 1e-12


@dataclass
class LossWeights:
    lambda_gp: float = 10.0
    alpha: float = 0.001
    alpha_pg: float = 0.01
    alpha_d: float = 1.0
    alpha_e: float = 0.001
    alpha_b: float = 0.1
    eta: float = 10.0
    beta_v: float = 1.0
    beta_a: float = 1.0
    floor_c: float = 0.001
    p: float = 2.0

    # values taken from the published training setup; the rest are local defaults
    PAPER_VALUES = ("lambda_gp", "alpha", "p")

    def __post_init__(self):
        if self.lambda_gp < 0 or self.alpha < 0:
            raise ValueError("lambda_gp and alpha must be non-negative")
        if self.p < 1:
            raise ValueError("norm order p must be >= 1")
        if self.floor_c < 0:
            raise ValueError("consistency floor must be non-negative")
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _batched(x: torch.Tensor) -> torch.Tensor:
    return x.unsqueeze(0) if x.dim() == 3 else x


def _log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(p, min=LOG_CLAMP))


def _as_t(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def d_gan_loss(p_real, p_fake) -> torch.Tensor:
    p_real, p_fake = _as_t(p_real), _as_t(p_fake)
    return -(_log(p_real) + _log(1 - p_fake)).mean()


def g_gan_loss(p_fake) -> torch.Tensor:
    return -_log(_as_t(p_fake)).mean()


def gradient_penalty(D: Callable[[torch.Tensor], torch.Tensor], prior: torch.Tensor,
                     future_real: torch.Tensor, future_fake: torch.Tensor,
                     generator: Optional[torch.Generator] = None,
                     eps: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean over the batch of (||grad_xhat D(xhat)|| - 1)^2.

    ``xhat`` interpolates the real and fake concatenated sequences with one
    uniform ``eps`` per sample.  ``D`` maps a batch of sequences to one
    probability per sample.  The result keeps the graph so its gradient
    reaches the discriminator parameters.
    """
    if future_real.shape != future_fake.shape:
        raise ValueError(f"real/fake shape mismatch: {tuple(future_real.shape)} vs {tuple(future_fake.shape)}")
    real = torch.cat([prior, future_real], dim=1)
    fake = torch.cat([prior, future_fake], dim=1)
    B = real.shape[0]
    if eps is None:
        eps = torch.rand(B, generator=generator, dtype=real.dtype)
    eps = eps.reshape((B,) + (1,) * (real.dim() - 1)).to(real.dtype)
    xhat = (eps * real.detach() + (1 - eps) * fake.detach()).requires_grad_(True)
    norms = grad_norm(D(xhat), xhat, per_sample=True)
    return ((norms - 1) ** 2).mean()


def d_total_loss(gan: torch.Tensor, gp: torch.Tensor, theta_l2: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    return gan + weights.lambda_gp * gp + weights.alpha * theta_l2


def consistency_loss(pred: torch.Tensor, weights: LossWeights, last_prior: Optional[torch.Tensor] = None) -> torch.Tensor:
    """max(C, p-norm of frame-to-frame differences), per sample.

    With ``last_prior`` (B, J, 3) the jump from the last observed pose to the
    first predicted one is included.
    """
    pred = _batched(pred)
    if last_prior is not None:
        last_prior = last_prior.unsqueeze(0) if last_prior.dim() == 2 else last_prior
        pred = torch.cat([last_prior.unsqueeze(1), pred], dim=1)
    if pred.shape[1] < 2:
        raise ValueError("consistency loss needs at least two poses")
    diff = (pred[:, 1:] - pred[:, :-1]).reshape(pred.shape[0], -1)
    norm = torch.linalg.vector_norm(diff, ord=weights.p, dim=1)
    return torch.clamp(norm, min=weights.floor_c).mean()


def mean_abs_difference(pred1: torch.Tensor, pred2: torch.Tensor) -> torch.Tensor:
    pred1, pred2 = _batched(pred1), _batched(pred2)
    return (pred1 - pred2).abs().reshape(pred1.shape[0], -1).mean(dim=1)


def diversity_loss(pred1: torch.Tensor, pred2: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    if pred1.shape != pred2.shape:
        raise ValueError("diversity loss needs predictions of equal shape")
    delta = mean_abs_difference(pred1, pred2)
    return (1 - torch.sigmoid(weights.eta * delta)).mean()


def energy_terms(pred: torch.Tensor, weights: LossWeights) -> dict:
    """Velocity and acceleration energy of the center of mass, per sample."""
    pred = _batched(pred)
    com = pred.mean(dim=-2)                      # (B, n, 3)
    v = com[:, 1:] - com[:, :-1]
    vel = weights.beta_v * (v ** 2).sum(dim=(1, 2))
    omitted = pred.shape[1] < 3
    if omitted:
        acc = torch.zeros_like(vel)
    else:
        a = v[:, 1:] - v[:, :-1]
        acc = weights.beta_a * (a ** 2).sum(dim=(1, 2))
    return {"velocity": vel, "acceleration": acc, "acceleration_omitted": omitted}


def energy_loss(pred: torch.Tensor, weights: LossWeights, return_terms: bool = False):
    terms = energy_terms(pred, weights)
    loss = (terms["velocity"] + terms["acceleration"]).mean()
    return (loss, terms) if return_terms else loss


def torch_bone_lengths(pose: torch.Tensor, spec: SkeletonSpec) -> torch.Tensor:
    if pose.shape[-2] != spec.joint_count:
        raise ValueError(f"pose has {pose.shape[-2]} joints, skeleton {spec.name} has {spec.joint_count}")
    diff = pose[..., list(spec.children), :] - pose[..., list(spec.parents), :]
    return torch.linalg.vector_norm(diff, dim=-1)


def bone_loss(pred: torch.Tensor, reference_bones: torch.Tensor, spec: SkeletonSpec) -> torch.Tensor:
    """Sum over frames of the L2 norm of bone-length errors, averaged over the batch.

    ``reference_bones`` is ``(n_bones,)`` or ``(B, n_bones)``.
    """
    pred = _batched(pred)
    lengths = torch_bone_lengths(pred, spec)               # (B, n, nb)
    ref = _as_t(reference_bones).to(lengths.dtype)
    if ref.shape[-1] != len(spec.bones):
        raise ValueError("reference bone count does not match skeleton")
    ref = ref.reshape(-1, 1, len(spec.bones)) if ref.dim() == 2 else ref.reshape(1, 1, -1)
    per_frame = torch.linalg.vector_norm(lengths - ref, dim=-1)
    return per_frame.sum(dim=1).mean()


GENERATOR_TERMS = ("gan", "consistency", "diversity", "energy", "bone")


def g_total_loss(components: Mapping[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    return (components["gan"]
            + weights.alpha_pg * components["consistency"]
            + weights.alpha_d * components["diversity"]
            + weights.alpha_e * components["energy"]
            + weights.alpha_b * components["bone"])


def q_loss(p_real, p_fake, theta_l2, alpha: float) -> torch.Tensor:
    return d_gan_loss(p_real, p_fake) + alpha * _as_t(theta_l2)


def classification_loss(scores: torch.Tensor, labels) -> torch.Tensor:
    scores = scores.unsqueeze(0) if scores.dim() == 1 else scores
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    k = scores.shape[-1]
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= k):
        raise ValueError(f"label out of range for {k} classes")
    return torch.nn.functional.cross_entropy(scores, labels)


def quality_hit_count(probs, threshold: float = 0.5) -> int:
    """Number of predictions the quality network scores above ``threshold``."""
    return int(np.sum(np.asarray(probs) > threshold))
