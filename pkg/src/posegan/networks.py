"""Generator, discriminator and quality networks."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional, Tuple

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .autodiff import get_dtype


@dataclass
class LatentSpec:
    dim: int = 128
    distribution: str = "uniform"   # "uniform" on [low, high] or "gaussian" with scale
    low: float = -1.0
    high: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("latent dim must be positive")
        if self.distribution not in ("uniform", "gaussian"):
            raise ValueError(f"unknown latent distribution {self.distribution!r}")

    def sample(self, batch: int, generator: torch.Generator, dtype=None) -> torch.Tensor:
        dtype = dtype or get_dtype()
        if self.distribution == "uniform":
            u = torch.rand(batch, self.dim, generator=generator, dtype=dtype)
            return self.low + (self.high - self.low) * u
        return self.scale * torch.randn(batch, self.dim, generator=generator, dtype=dtype)

    def to_dict(self) -> dict:
        return asdict(self)


def _fan_in_uniform_(module: nn.Module, generator: torch.Generator) -> None:
    for name, p in module.named_parameters():
        if p.dim() >= 2:
            bound = 1.0 / math.sqrt(p.shape[1])
        elif isinstance(module, (nn.GRU,)):
            bound = 1.0 / math.sqrt(module.hidden_size)
        else:
            bound = 1.0 / math.sqrt(p.shape[0])
        with torch.no_grad():
            nn.init.uniform_(p, -bound, bound, generator=generator)


def _linear(n_in: int, n_out: int, generator: torch.Generator, bias: bool = True, dtype=None) -> nn.Linear:
    layer = nn.Linear(n_in, n_out, bias=bias, dtype=dtype or get_dtype())
    bound = 1.0 / math.sqrt(n_in)
    with torch.no_grad():
        nn.init.uniform_(layer.weight, -bound, bound, generator=generator)
        if bias:
            nn.init.uniform_(layer.bias, -bound, bound, generator=generator)
    return layer


def _zero(layer: nn.Linear) -> nn.Linear:
    with torch.no_grad():
        layer.weight.zero_()
        if layer.bias is not None:
            layer.bias.zero_()
    return layer


def _seeded(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


class Generator(nn.Module):
    """Sequence-to-sequence GRU that maps (prior poses, z) to future poses.

    The final encoder state of every layer is shifted by a bias-free linear
    projection of ``z``; the shifted state seeds the decoder, whose first
    input is the encoder's last top-layer output.  Later decoder inputs are
    the embedded previous predictions.  With ``residual=True`` each decoder
    step outputs a displacement added to the previous pose (the last prior
    pose for the first step).  ``z_init_scale`` shrinks the initial z
    projection so that dependence on z is learned rather than inherited.
    """

    def __init__(self, n_joints: int, hidden: int = 256, layers: int = 2, z_dim: int = 128,
                 seed: int = 0, residual: bool = True, z_init_scale: float = 0.01, dtype=None):
        super().__init__()
        dtype = dtype or get_dtype()
        g = _seeded(seed)
        self.n_joints, self.hidden, self.layers, self.z_dim = n_joints, hidden, layers, z_dim
        self.residual = residual
        pose_dim = n_joints * 3
        self.pose_in = _linear(pose_dim, hidden, g, dtype=dtype)
        self.encoder = nn.GRU(hidden, hidden, layers, batch_first=True, dtype=dtype)
        self.decoder = nn.GRU(hidden, hidden, layers, batch_first=True, dtype=dtype)
        _fan_in_uniform_(self.encoder, g)
        _fan_in_uniform_(self.decoder, g)
        self.z_proj = nn.ModuleList(_linear(z_dim, hidden, g, bias=False, dtype=dtype) for _ in range(layers))
        with torch.no_grad():
            for proj in self.z_proj:
                proj.weight.mul_(z_init_scale)
        self.pose_out = _linear(hidden, pose_dim, g, dtype=dtype)

    def forward(self, prior: torch.Tensor, z: torch.Tensor, horizon: int) -> torch.Tensor:
        """prior: (B, m, J, 3); z: (B, z_dim) -> (B, horizon, J, 3)."""
        if prior.shape[1] == 0:
            raise ValueError("empty prior")
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        if z.shape[-1] != self.z_dim:
            raise ValueError(f"z has dim {z.shape[-1]}, expected {self.z_dim}")
        B, m = prior.shape[:2]
        enc_out, h = self.encoder(torch.tanh(self.pose_in(prior.reshape(B, m, -1))))
        h = h + torch.stack([proj(z) for proj in self.z_proj])
        step_in = enc_out[:, -1:, :]
        pose = prior[:, -1:].reshape(B, 1, -1)
        outs = []
        for _ in range(horizon):
            dec_out, h = self.decoder(step_in, h)
            pose = pose + self.pose_out(dec_out) if self.residual else self.pose_out(dec_out)
            outs.append(pose)
            step_in = torch.tanh(self.pose_in(pose))
        return torch.cat(outs, dim=1).reshape(B, horizon, self.n_joints, 3)


class Discriminator(nn.Module):
    """Fully connected trunk with additive skips, a GAN head and an optional classification head.

    Each head is two layers; the classification head replaces the GAN head
    for action recognition while the trunk is shared.
    """

    def __init__(self, seq_len: int, n_joints: int, width: int = 512, depth: int = 6,
                 head_width: Optional[int] = None, slope: float = 0.2, seed: int = 0, dtype=None):
        super().__init__()
        if depth < 1:
            raise ValueError("trunk depth must be at least 1")
        dtype = dtype or get_dtype()
        g = _seeded(seed)
        self.seq_len, self.n_joints, self.width, self.depth = seq_len, n_joints, width, depth
        self.head_width = head_width or width
        self.slope = slope
        self.input_size = seq_len * n_joints * 3
        self.inp = _linear(self.input_size, width, g, dtype=dtype)
        self.trunk = nn.ModuleList(_linear(width, width, g, dtype=dtype) for _ in range(depth - 1))
        self.gan_head = nn.Sequential(_linear(width, self.head_width, g, dtype=dtype),
                                      nn.LeakyReLU(slope),
                                      _zero(_linear(self.head_width, 1, g, dtype=dtype)))
        self.cls_head: Optional[nn.Sequential] = None
        self.n_classes: Optional[int] = None

    def features(self, seq: torch.Tensor) -> torch.Tensor:
        x = seq.reshape(seq.shape[0], -1)
        if x.shape[1] != self.input_size:
            raise ValueError(f"discriminator expects {self.input_size} inputs per sample, got {x.shape[1]}")
        h = F.leaky_relu(self.inp(x), self.slope)
        # residual block every two trunk layers; an odd trailing layer is plain
        i = 0
        while i < len(self.trunk):
            if i + 1 < len(self.trunk):
                r = F.leaky_relu(self.trunk[i](h), self.slope)
                h = h + F.leaky_relu(self.trunk[i + 1](r), self.slope)
                i += 2
            else:
                h = F.leaky_relu(self.trunk[i](h), self.slope)
                i += 1
        return h

    def logit(self, seq: torch.Tensor) -> torch.Tensor:
        return self.gan_head(self.features(seq)).squeeze(-1)

    def forward(self, seq: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        feats = self.features(seq)
        return torch.sigmoid(self.gan_head(feats).squeeze(-1)), feats

    def prob(self, seq: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logit(seq))

    def init_classifier_head(self, n_classes: int, seed: int = 0) -> None:
        if n_classes < 2:
            raise ValueError("classification needs at least two classes")
        g = _seeded(seed)
        dtype = self.inp.weight.dtype
        self.cls_head = nn.Sequential(_linear(self.width, self.head_width, g, dtype=dtype),
                                      nn.LeakyReLU(self.slope),
                                      _linear(self.head_width, n_classes, g, dtype=dtype))
        self.n_classes = n_classes

    def classify(self, seq: torch.Tensor) -> torch.Tensor:
        if self.cls_head is None:
            raise RuntimeError("classification head is not initialized")
        return self.cls_head(self.features(seq))

    def trunk_state(self) -> dict:
        return {k: v for k, v in self.state_dict().items() if k.startswith(("inp.", "trunk."))}


class QualityNetwork(nn.Module):
    """Multi-layer GRU with dot-product temporal attention pooling."""

    def __init__(self, n_joints: int, hidden: int = 128, layers: int = 2, seed: int = 0, dtype=None):
        super().__init__()
        dtype = dtype or get_dtype()
        g = _seeded(seed)
        self.n_joints, self.hidden, self.layers = n_joints, hidden, layers
        self.rnn = nn.GRU(n_joints * 3, hidden, layers, batch_first=True, dtype=dtype)
        _fan_in_uniform_(self.rnn, g)
        self.attention = nn.Parameter(torch.empty(hidden, dtype=dtype))
        with torch.no_grad():
            nn.init.uniform_(self.attention, -1 / math.sqrt(hidden), 1 / math.sqrt(hidden), generator=g)
        self.head = _zero(_linear(hidden, 1, g, dtype=dtype))

    def attend(self, seq: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Return (pooled vector (B, H), attention weights (B, T))."""
        B, T = seq.shape[:2]
        out, _ = self.rnn(seq.reshape(B, T, -1))
        w = torch.softmax(out @ self.attention, dim=1)
        return (w.unsqueeze(-1) * out).sum(dim=1), w

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        pooled, _ = self.attend(seq)
        return torch.sigmoid(self.head(pooled).squeeze(-1))


def param_l2(module: nn.Module) -> torch.Tensor:
    """Plain (not squared) L2 norm of all parameters of ``module``."""
    return torch.linalg.vector_norm(torch.cat([p.reshape(-1) for p in module.parameters()]))


def count_params(module: nn.Module) -> int:
    return int(sum(np.prod(p.shape) for p in module.parameters()))
