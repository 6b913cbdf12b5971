"""Probabilistic human motion prediction with adversarial training and a learned quality critic."""
from .estimators import ActionClassifier, MotionGAN, PoseNormalizer
from .losses import LossWeights
from .networks import Discriminator, Generator, LatentSpec, QualityNetwork
from .skeleton import BODY8, NormalizationStats, PoseSequence, SkeletonSpec, make_synthetic_dataset
from .training import Checkpoint, GANTrainer, TrainConfig, TrainingDiverged, train_classifier, train_gan

__version__ = "0.1.0"

__all__ = [
    "ActionClassifier", "MotionGAN", "PoseNormalizer", "LossWeights", "Discriminator", "Generator",
    "LatentSpec", "QualityNetwork", "BODY8", "NormalizationStats", "PoseSequence", "SkeletonSpec",
    "make_synthetic_dataset", "Checkpoint", "GANTrainer", "TrainConfig", "TrainingDiverged",
    "train_classifier", "train_gan",
]
