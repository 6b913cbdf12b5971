"""Adversarial training, quality-driven model selection and the classification experiments."""
from __future__ import annotations

import copy
import logging
import math
import warnings
from dataclasses import dataclass, field, asdict, fields
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from . import losses as L
from .autodiff import backward, get_dtype, set_precision
from .losses import LossWeights
from .networks import Discriminator, Generator, LatentSpec, QualityNetwork, param_l2
from .skeleton import (BODY8, NormalizationStats, PoseSequence, SkeletonSpec, compute_stats, normalize,
                       sample_training_pair, split_segments)

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "epoch", "loss_d", "loss_g", "loss_q", "loss_pg", "loss_div", "loss_energy",
                  "loss_bone", "loss_gan_d", "loss_gp", "loss_gan_g", "loss_gan_q", "d_real", "d_fake",
                  "q_real", "q_fake")


class TrainingDiverged(RuntimeError):
    """Raised when a loss becomes non-finite; ``snapshot`` holds the offending step."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


class UnstableConfigWarning(UserWarning):
    pass


@dataclass
class TrainConfig:
    # sequence layout
    m: int = 10
    n: int = 20
    frame_stride: int = 2
    segment_len: int = 40
    # schedule
    k_disc_iters: int = 10
    lr: float = 5e-5
    lr_quality: Optional[float] = None
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    epochs: int = 300
    batch_size: int = 32
    seed: int = 0
    n_selection: int = 16
    selection_warmup_epochs: Optional[int] = None
    n_validation: int = 16
    # networks
    gen_hidden: int = 256
    gen_layers: int = 2
    gen_residual: bool = True
    gen_z_init_scale: float = 0.01
    disc_width: int = 512
    disc_depth: int = 6
    disc_head_width: Optional[int] = None
    quality_hidden: int = 128
    quality_layers: int = 2
    # classification phase
    cls_epochs: int = 50
    cls_lr: float = 1e-4
    cls_batch_size: int = 32
    test_fraction: float = 0.25
    # experiment switches
    adversarial: str = "gan"          # "gan" or "wgan-gp" (no parity guarantees)
    gp_input: str = "logit"           # penalize the gradient of the logit (or of the probability)
    dtype: str = "float64"
    latent: LatentSpec = field(default_factory=LatentSpec)
    weights: LossWeights = field(default_factory=LossWeights)

    # keys whose defaults come from the published training setup
    PAPER_DEFAULTS = ("m", "n", "frame_stride", "k_disc_iters", "lr", "lr_quality", "epochs")

    def __post_init__(self):
        if isinstance(self.latent, dict):
            self.latent = LatentSpec(**self.latent)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.adam_betas = tuple(self.adam_betas)
        if self.lr_quality is None:
            self.lr_quality = self.lr / 2
        if self.k_disc_iters < 1:
            raise ValueError("k_disc_iters must be >= 1")
        for name in ("lr", "lr_quality", "cls_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if self.segment_len < self.m + self.n:
            raise ValueError("segment_len must be at least m + n")
        if self.adversarial not in ("gan", "wgan-gp"):
            raise ValueError(f"unknown adversarial mode {self.adversarial!r}")
        if self.gp_input not in ("prob", "logit"):
            raise ValueError(f"gp_input must be 'prob' or 'logit', not {self.gp_input!r}")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must be in (0, 1)")

    @property
    def warmup(self) -> int:
        if self.selection_warmup_epochs is not None:
            return self.selection_warmup_epochs
        return max(1, int(math.ceil(0.1 * self.epochs)))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["adam_betas"] = list(self.adam_betas)
        d["latent"] = self.latent.to_dict()
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        d = self.to_dict()
        for k, v in changes.items():
            if k in LossWeights.field_names() and k not in d:
                d["weights"][k] = v
            else:
                d[k] = v
        return TrainConfig.from_dict(d)


@dataclass
class Checkpoint:
    generator: dict
    discriminator: dict
    quality: dict
    optimizers: dict
    epoch: int
    k_best: int
    history: List[dict]
    config: dict
    skeleton: dict
    stats: dict

    def models(self):
        """Rebuild (generator, discriminator, quality network) from the stored state."""
        cfg = TrainConfig.from_dict(copy.deepcopy(self.config))
        spec = SkeletonSpec.from_dict(self.skeleton)
        G, D, Q = build_networks(cfg, spec)
        G.load_state_dict(self.generator)
        D.load_state_dict(self.discriminator)
        Q.load_state_dict(self.quality)
        return G, D, Q

    @property
    def normalization(self) -> NormalizationStats:
        return NormalizationStats(np.asarray(self.stats["mean"]), np.asarray(self.stats["std"]))


def build_networks(config: TrainConfig, spec: SkeletonSpec):
    set_precision(config.dtype)
    dtype = get_dtype()
    J = spec.joint_count
    G = Generator(J, config.gen_hidden, config.gen_layers, config.latent.dim, seed=config.seed * 7 + 1,
                  residual=config.gen_residual, z_init_scale=config.gen_z_init_scale, dtype=dtype)
    D = Discriminator(config.m + config.n, J, config.disc_width, config.disc_depth, config.disc_head_width,
                      seed=config.seed * 7 + 2, dtype=dtype)
    Q = QualityNetwork(J, config.quality_hidden, config.quality_layers, seed=config.seed * 7 + 3, dtype=dtype)
    return G, D, Q


def _segments(clips: Sequence[PoseSequence], config: TrainConfig) -> List[PoseSequence]:
    segs = []
    for clip in clips:
        segs.extend(split_segments(clip, config.segment_len, config.frame_stride))
    if not segs:
        raise ValueError(f"no clip is long enough for {config.segment_len} frames at stride {config.frame_stride}")
    return segs


def _to_torch(x: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(x, dtype=get_dtype())


class GANTrainer:
    """Holds the three networks, their optimizers and the sampling state for one run."""

    def __init__(self, clips: Sequence[PoseSequence], config: TrainConfig, spec: SkeletonSpec = BODY8,
                 stats: Optional[NormalizationStats] = None,
                 validation: Optional[Sequence[PoseSequence]] = None):
        for c in clips:
            c.check_skeleton(spec)
        self.config, self.spec = config, spec
        self.stats = stats or compute_stats(clips)
        if config.weights.lambda_gp == 0:
            warnings.warn("gradient penalty disabled (lambda_gp=0): training is known to be unstable "
                          "without it", UnstableConfigWarning, stacklevel=2)
        self.G, self.D, self.Q = build_networks(config, spec)
        self.segments = [normalize(s, self.stats) for s in _segments(clips, config)]
        self.rng = np.random.default_rng(config.seed)
        self.torch_gen = torch.Generator().manual_seed(config.seed + 12345)
        betas, eps = config.adam_betas, config.adam_eps
        self.opt_g = torch.optim.Adam(self.G.parameters(), lr=config.lr, betas=betas, eps=eps)
        self.opt_d = torch.optim.Adam(self.D.parameters(), lr=config.lr, betas=betas, eps=eps)
        self.opt_q = torch.optim.Adam(self.Q.parameters(), lr=config.lr_quality, betas=betas, eps=eps)
        self._mean = _to_torch(self.stats.mean)
        self._scale = _to_torch(2 * self.stats.std)
        self.step = 0
        self.epoch = 0
        self.history: List[dict] = []
        self.k_best = -1
        self.best: Optional[Checkpoint] = None
        val = validation if validation is not None else None
        self.val_priors = self._validation_priors(val)

    # -- data ---------------------------------------------------------------
    def _validation_priors(self, val) -> torch.Tensor:
        rng = np.random.default_rng(self.config.seed + 999)
        m, n = self.config.m, self.config.n
        if val is None:
            pool = self.segments
        else:
            pool = [normalize(s, self.stats) for s in _segments(val, self.config)]
        idx = rng.choice(len(pool), size=min(self.config.n_validation, len(pool)), replace=False)
        priors = [sample_training_pair(pool[i], m, n, rng).prior.frames for i in idx]
        return _to_torch(np.stack(priors))

    def sample_batch(self, indices) -> tuple:
        m, n = self.config.m, self.config.n
        pairs = [sample_training_pair(self.segments[i], m, n, self.rng) for i in indices]
        prior = _to_torch(np.stack([p.prior.frames for p in pairs]))
        future = _to_torch(np.stack([p.future.frames for p in pairs]))
        return prior, future

    def random_batch(self) -> tuple:
        size = min(self.config.batch_size, len(self.segments))
        return self.sample_batch(self.rng.choice(len(self.segments), size=size, replace=False))

    def to_meters(self, x: torch.Tensor) -> torch.Tensor:
        return x * self._scale + self._mean

    def sample_z(self, batch: int) -> torch.Tensor:
        return self.config.latent.sample(batch, self.torch_gen)

    # -- single updates -----------------------------------------------------
    @staticmethod
    def _apply(root: torch.Tensor, module: torch.nn.Module, opt: torch.optim.Optimizer) -> None:
        params = [p for p in module.parameters() if p.requires_grad]
        grads = backward(root, params)
        for i, p in enumerate(params):
            p.grad = grads[i].detach()
        opt.step()
        for p in params:
            p.grad = None

    def d_step(self, prior: torch.Tensor, future: torch.Tensor) -> dict:
        cfg, w = self.config, self.config.weights
        with torch.no_grad():
            fake = self.G(prior, self.sample_z(prior.shape[0]), cfg.n)
        real_seq = torch.cat([prior, future], dim=1)
        fake_seq = torch.cat([prior, fake], dim=1)
        if cfg.adversarial == "gan":
            p_real, p_fake = self.D.prob(real_seq), self.D.prob(fake_seq)
            gan = L.d_gan_loss(p_real, p_fake)
            critic = self.D.prob if cfg.gp_input == "prob" else self.D.logit
        else:
            l_real, l_fake = self.D.logit(real_seq), self.D.logit(fake_seq)
            gan = l_fake.mean() - l_real.mean()
            p_real, p_fake = torch.sigmoid(l_real), torch.sigmoid(l_fake)
            critic = self.D.logit
        if w.lambda_gp > 0:
            gp = L.gradient_penalty(critic, prior, future, fake, generator=self.torch_gen)
        else:
            gp = torch.zeros((), dtype=gan.dtype)
        total = L.d_total_loss(gan, gp, param_l2(self.D), w)
        self._apply(total, self.D, self.opt_d)
        return {"loss_d": total.item(), "loss_gan_d": gan.item(), "loss_gp": gp.item(),
                "d_real": p_real.mean().item(), "d_fake": p_fake.mean().item()}

    def generator_components(self, prior: torch.Tensor):
        """Forward pass of the generator objective; returns (components, first prediction)."""
        cfg, w = self.config, self.config.weights
        B = prior.shape[0]
        fake1 = self.G(prior, self.sample_z(B), cfg.n)
        fake2 = self.G(prior, self.sample_z(B), cfg.n)
        seq = torch.cat([prior, fake1], dim=1)
        if cfg.adversarial == "gan":
            gan = L.g_gan_loss(self.D.prob(seq))
        else:
            gan = -self.D.logit(seq).mean()
        fake_m, prior_m = self.to_meters(fake1), self.to_meters(prior)
        ref = L.torch_bone_lengths(prior_m, self.spec).mean(dim=1)
        comps = {
            "gan": gan,
            "consistency": L.consistency_loss(fake_m, w, last_prior=prior_m[:, -1]),
            "diversity": L.diversity_loss(fake1, fake2, w),
            "energy": L.energy_loss(fake_m, w),
            "bone": L.bone_loss(fake_m, ref, self.spec),
        }
        return comps, fake1

    def g_step(self, prior: torch.Tensor) -> tuple:
        comps, fake = self.generator_components(prior)
        total = L.g_total_loss(comps, self.config.weights)
        self._apply(total, self.G, self.opt_g)
        row = {"loss_g": total.item(), "loss_gan_g": comps["gan"].item(), "loss_pg": comps["consistency"].item(),
               "loss_div": comps["diversity"].item(), "loss_energy": comps["energy"].item(),
               "loss_bone": comps["bone"].item()}
        return row, fake.detach()

    def quality_objective(self, prior: torch.Tensor, future: torch.Tensor, fake: torch.Tensor) -> tuple:
        """(total, gan part, p_real, p_fake); the prediction is detached from the generator graph."""
        p_real = self.Q(torch.cat([prior, future], dim=1))
        p_fake = self.Q(torch.cat([prior, fake.detach()], dim=1))
        gan = L.d_gan_loss(p_real, p_fake)
        total = L.q_loss(p_real, p_fake, param_l2(self.Q), self.config.weights.alpha)
        return total, gan, p_real, p_fake

    def q_step(self, prior: torch.Tensor, future: torch.Tensor, fake: torch.Tensor) -> dict:
        total, gan, p_real, p_fake = self.quality_objective(prior, future, fake)
        self._apply(total, self.Q, self.opt_q)
        return {"loss_q": total.item(), "loss_gan_q": gan.item(),
                "q_real": p_real.mean().item(), "q_fake": p_fake.mean().item()}

    def outer_step(self, prior: torch.Tensor, future: torch.Tensor) -> dict:
        d_rows = [self.d_step(*self.random_batch()) for _ in range(self.config.k_disc_iters)]
        row = {k: float(np.mean([r[k] for r in d_rows])) for k in d_rows[0]}
        g_row, fake = self.g_step(prior)
        row.update(g_row)
        row.update(self.q_step(prior, future, fake))
        self.step += 1
        row["step"], row["epoch"] = self.step, self.epoch + 1
        row = {k: row[k] for k in METRIC_COLUMNS}
        bad = [k for k, v in row.items() if not np.isfinite(v)]
        if bad:
            raise TrainingDiverged(f"non-finite loss at step {self.step}: {bad}",
                                   {"row": row, "epoch": self.epoch + 1, "step": self.step})
        self.history.append(row)
        return row

    # -- epochs -------------------------------------------------------------
    def train_epoch(self) -> List[dict]:
        order = self.rng.permutation(len(self.segments))
        bs = self.config.batch_size
        rows = []
        for start in range(0, len(order), bs):
            prior, future = self.sample_batch(order[start:start + bs])
            rows.append(self.outer_step(prior, future))
        self.epoch += 1
        if self.epoch >= self.config.warmup:
            hits = self.selection_count()
            if hits > self.k_best:
                self.k_best = hits
                self.best = self.checkpoint()
        return rows

    def fit(self, epochs: Optional[int] = None, callback=None) -> "GANTrainer":
        for _ in range(self.config.epochs if epochs is None else epochs):
            rows = self.train_epoch()
            if callback is not None:
                callback(self, rows)
            log.info("epoch %d: d=%.4f g=%.4f q=%.4f k_best=%d", self.epoch, rows[-1]["loss_d"],
                     rows[-1]["loss_g"], rows[-1]["loss_q"], self.k_best)
        return self

    # -- evaluation ---------------------------------------------------------
    @torch.no_grad()
    def predict(self, prior: torch.Tensor, samples: int, horizon: Optional[int] = None,
                generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """(S, B, horizon, J, 3) normalized predictions for ``samples`` z draws.

        z is drawn from ``generator`` when given, otherwise from the training stream.
        """
        horizon = horizon or self.config.n
        draw = (lambda b: self.config.latent.sample(b, generator)) if generator is not None else self.sample_z
        return torch.stack([self.G(prior, draw(prior.shape[0]), horizon) for _ in range(samples)])

    @torch.no_grad()
    def selection_count(self) -> int:
        return select_count(self.G, self.Q, self.val_priors, self.config.n_selection, self.config.n,
                            self.config.latent, torch.Generator().manual_seed(self.config.seed + 4242))

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            generator=copy.deepcopy(self.G.state_dict()),
            discriminator=copy.deepcopy(self.D.state_dict()),
            quality=copy.deepcopy(self.Q.state_dict()),
            optimizers={"g": copy.deepcopy(self.opt_g.state_dict()), "d": copy.deepcopy(self.opt_d.state_dict()),
                        "q": copy.deepcopy(self.opt_q.state_dict())},
            epoch=self.epoch, k_best=self.k_best, history=list(self.history),
            config=self.config.to_dict(), skeleton=self.spec.to_dict(),
            stats={"mean": self.stats.mean.tolist(), "std": self.stats.std.tolist()},
        )


@torch.no_grad()
def select_count(G: Generator, Q: QualityNetwork, priors: torch.Tensor, N: int, horizon: int,
                 latent: LatentSpec, generator: torch.Generator) -> int:
    """Count predictions (N per prior) that the quality network rates above 0.5."""
    hits = 0
    for _ in range(N):
        z = latent.sample(priors.shape[0], generator, priors.dtype)
        probs = Q(torch.cat([priors, G(priors, z, horizon)], dim=1))
        hits += L.quality_hit_count(probs.numpy())
    return hits


class ModelSelector:
    """Tracks the checkpoint with the most quality hits once warm-up has passed."""

    def __init__(self, warmup: int):
        self.warmup = warmup
        self.best_id = None
        self.k_best = -1

    def update(self, epoch: int, count: int, checkpoint_id=None) -> bool:
        if epoch < self.warmup or count <= self.k_best:
            return False
        self.k_best, self.best_id = count, (epoch if checkpoint_id is None else checkpoint_id)
        return True


def select_best_model(counts: Dict, warmup: int = 0):
    """Pick the checkpoint id with the largest hit count among those at or after ``warmup``.

    ``counts`` maps checkpoint id (epoch number) to its hit count.
    """
    sel = ModelSelector(warmup)
    for epoch in sorted(counts):
        sel.update(epoch, counts[epoch])
    return sel.best_id


@dataclass
class GANRun:
    trainer: GANTrainer
    final: Checkpoint
    best: Optional[Checkpoint]

    @property
    def history(self):
        return self.trainer.history


def train_gan(clips: Sequence[PoseSequence], config: TrainConfig, spec: SkeletonSpec = BODY8,
              stats: Optional[NormalizationStats] = None, validation=None, callback=None) -> GANRun:
    trainer = GANTrainer(clips, config, spec, stats, validation)
    trainer.fit(callback=callback)
    final = trainer.checkpoint()
    return GANRun(trainer, final, trainer.best)


# ---------------------------------------------------------------------------
# classification

@dataclass
class ClassifierResult:
    init: str
    train_accuracy: List[float]
    test_accuracy: List[float]
    confusion: List[np.ndarray] = field(repr=False)
    classes: List[int] = field(default_factory=list)
    model: Optional[Discriminator] = field(default=None, repr=False)

    @property
    def final_confusion(self) -> np.ndarray:
        return self.confusion[-1]


def stratified_split(clips: Sequence[PoseSequence], fraction: float, seed: int):
    """Split clips per class; the first part holds ``round(fraction * count)`` clips of each class."""
    rng = np.random.default_rng(seed)
    labels = np.array([c.label for c in clips])
    first, second = [], []
    for cls in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        k = int(round(fraction * len(idx)))
        first.extend(idx[:k].tolist())
        second.extend(idx[k:].tolist())
    return [clips[i] for i in sorted(first)], [clips[i] for i in sorted(second)]


def stratified_subset(clips: Sequence[PoseSequence], fraction: float, seed: int) -> List[PoseSequence]:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1:
        return list(clips)
    subset, _ = stratified_split(clips, fraction, seed)
    have = {c.label for c in subset}
    missing = {c.label for c in clips} - have
    if missing:
        raise ValueError(f"fraction {fraction} leaves classes {sorted(missing)} empty")
    return subset


def _windows(clips, config: TrainConfig, stats, rng=None):
    """One (m+n)-frame normalized window per segment; random offset when ``rng`` is given."""
    xs, ys = [], []
    total = config.m + config.n
    for seg in _segments(clips, config):
        off = 0 if rng is None else int(rng.integers(0, len(seg) - total + 1))
        xs.append(normalize(seg.frames[off:off + total], stats))
        ys.append(seg.label)
    return _to_torch(np.stack(xs)), np.asarray(ys)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def train_classifier(train: Sequence[PoseSequence], test: Optional[Sequence[PoseSequence]], config: TrainConfig,
                     init: str = "random", pretrained: Optional[Checkpoint] = None,
                     spec: SkeletonSpec = BODY8, stats: Optional[NormalizationStats] = None,
                     n_classes: Optional[int] = None, seed: Optional[int] = None) -> ClassifierResult:
    """Supervised training of the discriminator trunk with a fresh two-layer classification head.

    ``init="pretrained"`` copies the trunk from ``pretrained``'s
    discriminator; ``init="random"`` keeps the random trunk.  Both arms use
    the same head initialization and data order for a given seed.  With
    ``test=None`` only training accuracy is tracked.
    """
    if init not in ("random", "pretrained"):
        raise ValueError(f"unknown init {init!r}")
    if init == "pretrained" and pretrained is None:
        raise ValueError("pretrained init needs a GAN checkpoint")
    seed = config.seed if seed is None else seed
    train_labels = {c.label for c in train}
    test_labels = {c.label for c in test} if test else set()
    if None in train_labels or None in test_labels:
        raise ValueError("classification needs labeled clips")
    if n_classes is None:
        n_classes = max(train_labels | test_labels) + 1
    if not test_labels <= train_labels or max(train_labels | test_labels) >= n_classes:
        raise ValueError(f"label set mismatch: train {sorted(train_labels)}, test {sorted(test_labels)}")
    if stats is None:
        stats = pretrained.normalization if pretrained is not None else compute_stats(train)

    set_precision(config.dtype)
    model = Discriminator(config.m + config.n, spec.joint_count, config.disc_width, config.disc_depth,
                          config.disc_head_width, seed=seed * 7 + 2, dtype=get_dtype())
    if init == "pretrained":
        model.load_state_dict(pretrained.discriminator)
    model.init_classifier_head(n_classes, seed=seed + 777)
    params = [p for name, p in model.named_parameters() if not name.startswith("gan_head.")]
    opt = torch.optim.Adam(params, lr=config.cls_lr, betas=config.adam_betas, eps=config.adam_eps)

    rng = np.random.default_rng(seed + 31)
    x_train_eval, y_train_eval = _windows(train, config, stats)
    x_test, y_test = _windows(test, config, stats) if test else (None, None)
    result = ClassifierResult(init, [], [], [], list(range(n_classes)), model)

    def accuracy(x, y):
        with torch.no_grad():
            pred = model.classify(x).argmax(dim=1).numpy()
        return float(np.mean(pred == y)), pred

    for _ in range(config.cls_epochs):
        x, y = _windows(train, config, stats, rng)
        order = rng.permutation(len(y))
        for start in range(0, len(order), config.cls_batch_size):
            idx = order[start:start + config.cls_batch_size]
            loss = L.classification_loss(model.classify(x[idx]), y[idx])
            grads = backward(loss, params)
            for i, p in enumerate(params):
                p.grad = grads[i]
            opt.step()
            for p in params:
                p.grad = None
        tr, _ = accuracy(x_train_eval, y_train_eval)
        result.train_accuracy.append(tr)
        if x_test is not None:
            te, pred = accuracy(x_test, y_test)
            result.test_accuracy.append(te)
            result.confusion.append(confusion_matrix(y_test, pred, n_classes))
    return result


def plateau(curve: Sequence[float], tail: int = 5) -> float:
    tail = max(1, min(tail, len(curve)))
    return float(np.mean(curve[-tail:]))


def epochs_to_threshold(curve: Sequence[float], threshold: float) -> Optional[int]:
    """1-based epoch at which ``curve`` first reaches ``threshold`` (None if never)."""
    for i, v in enumerate(curve):
        if v >= threshold - 1e-12:
            return i + 1
    return None


@dataclass
class ArmComparison:
    pretrained: ClassifierResult
    scratch: ClassifierResult
    gan: Optional[GANRun] = field(default=None, repr=False)

    @property
    def threshold(self) -> float:
        return plateau(self.scratch.test_accuracy) - 0.02

    @property
    def epochs_pretrained(self) -> Optional[int]:
        return epochs_to_threshold(self.pretrained.test_accuracy, self.threshold)

    @property
    def epochs_scratch(self) -> Optional[int]:
        return epochs_to_threshold(self.scratch.test_accuracy, self.threshold)

    def summary(self) -> dict:
        return {"threshold": self.threshold, "epochs_pretrained": self.epochs_pretrained,
                "epochs_scratch": self.epochs_scratch,
                "final_pretrained": self.pretrained.test_accuracy[-1],
                "final_scratch": self.scratch.test_accuracy[-1]}


def compare_arms(train, test, config: TrainConfig, checkpoint: Checkpoint, spec: SkeletonSpec = BODY8,
                 n_classes: Optional[int] = None) -> ArmComparison:
    stats = checkpoint.normalization
    kw = dict(spec=spec, stats=stats, n_classes=n_classes)
    pre = train_classifier(train, test, config, "pretrained", checkpoint, **kw)
    scr = train_classifier(train, test, config, "random", None, **kw)
    return ArmComparison(pre, scr)


def _gan_checkpoint(run: GANRun) -> Checkpoint:
    return run.final


def run_transfer_experiment(clips, config: TrainConfig, spec: SkeletonSpec = BODY8,
                            gan_run: Optional[GANRun] = None) -> ArmComparison:
    train, test = stratified_split(clips, 1 - config.test_fraction, config.seed)
    if gan_run is None:
        gan_run = train_gan(train, config, spec)
    cmp = compare_arms(train, test, config, _gan_checkpoint(gan_run), spec)
    cmp.gan = gan_run
    return cmp


def run_unseen_class_experiment(clips, holdout_classes, config: TrainConfig, spec: SkeletonSpec = BODY8):
    holdout = set(int(c) for c in holdout_classes)
    present = {c.label for c in clips}
    if not holdout:
        raise ValueError("holdout set is empty")
    if not holdout <= present:
        raise ValueError(f"holdout classes {sorted(holdout - present)} not in dataset")
    if holdout >= present:
        raise ValueError("holdout set covers every class")
    train, test = stratified_split(clips, 1 - config.test_fraction, config.seed)
    gan_clips = [c for c in train if c.label not in holdout]
    gan_run = train_gan(gan_clips, config, spec)
    cmp = compare_arms(train, test, config, _gan_checkpoint(gan_run), spec, n_classes=max(present) + 1)
    cmp.gan = gan_run
    return cmp


def run_reduced_data_experiment(clips, fraction: float, config: TrainConfig, spec: SkeletonSpec = BODY8,
                                gan_run: Optional[GANRun] = None) -> ArmComparison:
    train, test = stratified_split(clips, 1 - config.test_fraction, config.seed)
    subset = stratified_subset(train, fraction, config.seed + 5)
    if gan_run is None:
        gan_run = train_gan(train, config, spec)
    cmp = compare_arms(subset, test, config, _gan_checkpoint(gan_run), spec,
                       n_classes=max(c.label for c in clips) + 1)
    cmp.gan = gan_run
    return cmp


# ---------------------------------------------------------------------------
# ablations

ABLATION_TERMS = {"diversity": "alpha_d", "consistency": "alpha_pg", "gradient-penalty": "lambda_gp"}


def ablated_config(config: TrainConfig, toggle: str) -> TrainConfig:
    if toggle not in ABLATION_TERMS:
        raise ValueError(f"unknown toggle {toggle!r}; choose from {sorted(ABLATION_TERMS)}")
    d = config.to_dict()
    d["weights"][ABLATION_TERMS[toggle]] = 0.0
    return TrainConfig.from_dict(d)


@torch.no_grad()
def prediction_metrics(trainer: GANTrainer, samples: int = 8) -> dict:
    """Diversity (mean pairwise distance across z) and consistency (max inter-frame jump) in meters."""
    priors = trainer.val_priors
    # a private z stream keeps evaluation from shifting the training sequence
    gen = torch.Generator().manual_seed(trainer.config.seed + 777)
    preds = trainer.to_meters(trainer.predict(priors, samples, generator=gen))        # (S, B, n, J, 3)
    S = preds.shape[0]
    dists = [torch.linalg.vector_norm(preds[i] - preds[j], dim=-1).mean().item()
             for i in range(S) for j in range(i + 1, S)]
    prior_m = trainer.to_meters(priors)
    full = torch.cat([prior_m[:, -1:].expand(S, *prior_m[:, -1:].shape), preds], dim=2)
    jumps = torch.linalg.vector_norm(full[:, :, 1:] - full[:, :, :-1], dim=-1)
    ref = L.torch_bone_lengths(prior_m, trainer.spec).mean(dim=1)                 # (B, nb)
    bone_err = (L.torch_bone_lengths(preds, trainer.spec) - ref[None, :, None, :]).abs().mean().item()
    return {"diversity": float(np.mean(dists)) if dists else 0.0,
            "max_displacement": jumps.max().item(),
            "mean_displacement": jumps.mean().item(),
            "bone_error": bone_err}


def run_ablation(clips, config: TrainConfig, toggle: str, spec: SkeletonSpec = BODY8, samples: int = 8) -> dict:
    """Train with and without the named term on the same seed and data and compare."""
    ablated = ablated_config(config, toggle)
    out = {"toggle": toggle, "weight": ABLATION_TERMS[toggle], "ablated_config": ablated.to_dict()}
    for name, cfg in (("baseline", config), ("ablated", ablated)):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UnstableConfigWarning)
                run = train_gan(clips, cfg, spec)
            metrics = prediction_metrics(run.trainer, samples)
            metrics["converged"] = True
        except TrainingDiverged as exc:
            metrics = {"converged": False, "error": str(exc)}
        out[name] = metrics
    return out
