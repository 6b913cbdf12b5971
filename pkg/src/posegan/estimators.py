"""scikit-learn style wrappers around normalization, GAN training and action classification."""
from __future__ import annotations

import copy
import logging
from typing import Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .autodiff import get_dtype, set_precision
from .skeleton import BODY8, SkeletonSpec, compute_stats, split_segments
from .training import Checkpoint, GANTrainer, TrainConfig, _to_torch, train_classifier
from .validation import check_is_fitted, check_labeled, check_pose_array, check_sequences

log = logging.getLogger(__name__)


def _config(config) -> TrainConfig:
    if config is None:
        return TrainConfig()
    if isinstance(config, dict):
        return TrainConfig.from_dict(copy.deepcopy(config))
    if isinstance(config, TrainConfig):
        return config
    raise TypeError(f"config must be a TrainConfig, a dict or None, not {type(config).__name__}")


class PoseNormalizer(TransformerMixin, BaseEstimator):
    """Per-coordinate standardization ``(x - mean) / (2 * std)`` pooled over joints and frames."""

    def fit(self, X, y=None):
        clips = check_sequences(X, min_frames=2)
        self.stats_ = compute_stats(clips)
        self.mean_, self.std_ = self.stats_.mean, self.stats_.std
        self.n_joints_ = clips[0].frames.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        arr = check_pose_array(X, self.n_joints_)
        return (arr - self.mean_) / (2 * self.std_)

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        arr = check_pose_array(X, self.n_joints_)
        return arr * (2 * self.std_) + self.mean_


class MotionGAN(BaseEstimator):
    """Probabilistic motion predictor trained adversarially with a quality critic.

    ``fit`` takes a list of clips (``PoseSequence`` objects or (T, J, 3)
    arrays in meters).  After fitting, ``predict`` returns future poses in
    meters for several latent draws.  With ``use_best=True`` the networks of
    the checkpoint with the most quality hits are used when one exists.
    """

    def __init__(self, config=None, skeleton: SkeletonSpec = BODY8, use_best: bool = True, verbose: bool = False):
        self.config = config
        self.skeleton = skeleton
        self.use_best = use_best
        self.verbose = verbose

    def fit(self, X, y=None, validation=None, callback=None):
        cfg = _config(self.config)
        clips = check_sequences(X, self.skeleton, y=y)
        val = check_sequences(validation, self.skeleton) if validation is not None else None
        trainer = GANTrainer(clips, cfg, self.skeleton, validation=val)

        def report(tr, rows):
            if self.verbose:
                r = rows[-1]
                print(f"epoch {tr.epoch}: loss_d={r['loss_d']:.4f} loss_g={r['loss_g']:.4f} "
                      f"loss_q={r['loss_q']:.4f} k_best={tr.k_best}", flush=True)
            if callback is not None:
                callback(tr, rows)

        trainer.fit(callback=report)
        self.trainer_ = trainer
        self.history_ = list(trainer.history)
        self.final_checkpoint_ = trainer.checkpoint()
        self.best_checkpoint_ = trainer.best
        self._load(self.best_checkpoint_ if (self.use_best and trainer.best is not None) else self.final_checkpoint_)
        return self

    def _load(self, ckpt: Checkpoint) -> None:
        self.checkpoint_ = ckpt
        self.config_ = TrainConfig.from_dict(copy.deepcopy(ckpt.config))
        self.generator_, self.discriminator_, self.quality_ = ckpt.models()
        for net in (self.generator_, self.discriminator_, self.quality_):
            net.eval()
        self.stats_ = ckpt.normalization
        self.k_best_ = ckpt.k_best

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, **params) -> "MotionGAN":
        est = cls(config=TrainConfig.from_dict(copy.deepcopy(ckpt.config)),
                  skeleton=SkeletonSpec.from_dict(ckpt.skeleton), **params)
        est._load(ckpt)
        return est

    def save(self, path) -> None:
        from .io import save_checkpoint
        check_is_fitted(self, "checkpoint_")
        save_checkpoint(self.checkpoint_, path)

    @classmethod
    def load(cls, path, **params) -> "MotionGAN":
        from .io import load_checkpoint
        return cls.from_checkpoint(load_checkpoint(path), **params)

    # -- inference ------------------------------------------------------------
    def _norm(self, X, min_frames=1) -> torch.Tensor:
        set_precision(self.config_.dtype)
        arr = check_pose_array(X, self.generator_.n_joints, min_frames=min_frames)
        return _to_torch((arr - self.stats_.mean) / (2 * self.stats_.std))

    def _meters(self, x: torch.Tensor) -> np.ndarray:
        return x.detach().numpy() * (2 * self.stats_.std) + self.stats_.mean

    @torch.no_grad()
    def predict(self, prior, samples: int = 1, horizon: Optional[int] = None, seed: Optional[int] = None) -> np.ndarray:
        """Future poses in meters, shape (samples, B, horizon, J, 3).

        ``prior`` is (B, m, J, 3) or a single (m, J, 3) sequence.
        """
        check_is_fitted(self, "generator_")
        if samples < 1:
            raise ValueError("samples must be at least 1")
        horizon = self.config_.n if horizon is None else int(horizon)
        x = self._norm(prior)
        gen = torch.Generator().manual_seed(self.config_.seed if seed is None else int(seed))
        outs = [self.generator_(x, self.config_.latent.sample(x.shape[0], gen, x.dtype), horizon)
                for _ in range(samples)]
        return self._meters(torch.stack(outs))

    @torch.no_grad()
    def score_quality(self, X) -> np.ndarray:
        """Quality network probability that each (N, T, J, 3) sequence is valid human motion."""
        check_is_fitted(self, "quality_")
        return self.quality_(self._norm(X, min_frames=1)).numpy()

    @torch.no_grad()
    def discriminate(self, X) -> np.ndarray:
        """Discriminator probability for (N, m+n, J, 3) sequences."""
        check_is_fitted(self, "discriminator_")
        return self.discriminator_.prob(self._norm(X, min_frames=1)).numpy()


class ActionClassifier(ClassifierMixin, BaseEstimator):
    """Action recognizer built on the discriminator trunk.

    ``init="pretrained"`` starts from the discriminator of ``pretrained`` (a
    fitted :class:`MotionGAN` or a ``Checkpoint``); ``init="random"`` trains
    from scratch.  Clips are cut into fixed windows; a clip's class
    probabilities are the mean softmax over its windows.
    """

    def __init__(self, config=None, init: str = "random", pretrained=None, skeleton: SkeletonSpec = BODY8,
                 seed: Optional[int] = None):
        self.config = config
        self.init = init
        self.pretrained = pretrained
        self.skeleton = skeleton
        self.seed = seed

    def _checkpoint(self) -> Optional[Checkpoint]:
        if self.pretrained is None:
            return None
        if isinstance(self.pretrained, Checkpoint):
            return self.pretrained
        if isinstance(self.pretrained, MotionGAN):
            check_is_fitted(self.pretrained, "checkpoint_")
            return self.pretrained.checkpoint_
        raise TypeError("pretrained must be a Checkpoint or a fitted MotionGAN")

    def fit(self, X, y=None, X_test=None, y_test=None):
        cfg = _config(self.config)
        clips = check_sequences(X, self.skeleton, y=y)
        labels = check_labeled(clips)
        test = check_sequences(X_test, self.skeleton, y=y_test) if X_test is not None else None
        ckpt = self._checkpoint()
        self.classes_ = np.arange(int(labels.max()) + 1)
        stats = ckpt.normalization if ckpt is not None else compute_stats(clips)
        result = train_classifier(clips, test, cfg, self.init, ckpt, self.skeleton, stats,
                                  n_classes=len(self.classes_), seed=self.seed)
        self.result_ = result
        self.model_ = result.model.eval()
        self.stats_ = stats
        self.config_ = cfg
        self.train_accuracy_ = result.train_accuracy
        self.test_accuracy_ = result.test_accuracy
        return self

    def _clip_windows(self, clip) -> np.ndarray:
        cfg = self.config_
        total = cfg.m + cfg.n
        segs = split_segments(clip, cfg.segment_len, cfg.frame_stride)
        if not segs:
            raise ValueError(f"clip of {len(clip)} frames is too short for a {cfg.segment_len}-frame segment "
                             f"at stride {cfg.frame_stride}")
        return np.stack([s.frames[:total] for s in segs])

    @torch.no_grad()
    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        set_precision(self.config_.dtype)
        clips = check_sequences(X, self.skeleton)
        out = []
        for clip in clips:
            w = (self._clip_windows(clip) - self.stats_.mean) / (2 * self.stats_.std)
            probs = torch.softmax(self.model_.classify(torch.as_tensor(w, dtype=get_dtype())), dim=1)
            out.append(probs.mean(dim=0).numpy())
        return np.stack(out)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "classes_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
